"""Group session-key establishment between end device, serving gateway, and AS.

A single ephemeral-ephemeral Curve25519 exchange between device and gateway
yields the shared secret; HKDF-SHA256 with distinct labels, bound to the
device address and join nonce, turns it into the two 16-byte edge session
keys. A second, static-static exchange between each gateway and the AS
protects the hand-off of those keys to the AS.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from . import frames

KEY_LEN = 16
HANDOFF_TAG_LEN = 8

ENC_LABEL = b"e2l-enc"
INT_LABEL = b"e2l-int"
CHAN_ENC_LABEL = b"gwas-enc"
CHAN_INT_LABEL = b"gwas-int"


class KeyAgreementError(ValueError):
    """Rejected point, bad tag, or missing protocol state."""


@dataclass(frozen=True)
class EcKeyPair:
    private: bytes
    public: bytes


def generate_keypair(rng: random.Random) -> EcKeyPair:
    """Deterministic keypair from the scenario RNG (clamping happens in the curve op)."""
    priv = rng.randbytes(32)
    pub = X25519PrivateKey.from_private_bytes(priv).public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    return EcKeyPair(private=priv, public=pub)


def dh_shared(private_a: bytes, public_b: bytes) -> bytes:
    """Scalar multiplication; rejects the identity and other low-order points."""
    if len(private_a) != 32 or len(public_b) != 32:
        raise KeyAgreementError("scalar and point must be 32 bytes")
    try:
        shared = X25519PrivateKey.from_private_bytes(private_a).exchange(
            X25519PublicKey.from_public_bytes(public_b))
    except ValueError as exc:  # all-zero shared secret -> low-order input
        raise KeyAgreementError(str(exc)) from exc
    return shared


@dataclass(frozen=True)
class EdgeSessionKeys:
    """The two group keys shared by exactly the E2ED, its E2GW, and the AS."""

    edge_s_enc_key: bytes
    edge_s_int_key: bytes
    dev_addr: int
    assigned_gw: str

    def key_block(self) -> bytes:
        return self.edge_s_enc_key + self.edge_s_int_key


def _hkdf16(secret: bytes, info: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=KEY_LEN, salt=None,
                info=info).derive(secret)


def derive_edge_keys(shared: bytes, dev_addr: int, join_nonce: int,
                     assigned_gw: str = "") -> EdgeSessionKeys:
    context = dev_addr.to_bytes(4, "little") + join_nonce.to_bytes(3, "little")
    return EdgeSessionKeys(
        edge_s_enc_key=_hkdf16(shared, context + ENC_LABEL),
        edge_s_int_key=_hkdf16(shared, context + INT_LABEL),
        dev_addr=dev_addr,
        assigned_gw=assigned_gw,
    )


@dataclass(frozen=True)
class GwAsChannelKeys:
    """Per-gateway transport keys for the gateway-to-AS control channel."""

    chan_enc: bytes
    chan_int: bytes


def derive_channel_keys(gw_private: bytes, as_public: bytes, gw_id: str) -> GwAsChannelKeys:
    shared = dh_shared(gw_private, as_public)
    ident = gw_id.encode()
    return GwAsChannelKeys(
        chan_enc=_hkdf16(shared, ident + CHAN_ENC_LABEL),
        chan_int=_hkdf16(shared, ident + CHAN_INT_LABEL),
    )


def derive_channel_keys_as_side(as_private: bytes, gw_public: bytes,
                                gw_id: str) -> GwAsChannelKeys:
    shared = dh_shared(as_private, gw_public)
    ident = gw_id.encode()
    return GwAsChannelKeys(
        chan_enc=_hkdf16(shared, ident + CHAN_ENC_LABEL),
        chan_int=_hkdf16(shared, ident + CHAN_INT_LABEL),
    )


def seal_handoff(chan: GwAsChannelKeys, keys: EdgeSessionKeys,
                 seq: int) -> tuple[bytes, bytes]:
    """Encrypt-and-tag the 32-byte key block for transport to the AS.

    Returns (ciphertext, 8-byte tag). seq must be fresh per gateway.
    """
    ct = frames.encrypt_payload(chan.chan_enc, keys.dev_addr, seq,
                                frames.DIR_UP, keys.key_block())
    tag = frames.aes_cmac(
        chan.chan_int,
        keys.dev_addr.to_bytes(4, "little") + seq.to_bytes(4, "little") + ct,
    )[:HANDOFF_TAG_LEN]
    return ct, tag


def open_handoff(chan: GwAsChannelKeys, dev_addr: int, seq: int,
                 ciphertext: bytes, tag: bytes, assigned_gw: str) -> EdgeSessionKeys:
    """Verify-then-decrypt; raises KeyAgreementError on any mismatch."""
    expect = frames.aes_cmac(
        chan.chan_int,
        dev_addr.to_bytes(4, "little") + seq.to_bytes(4, "little") + ciphertext,
    )[:HANDOFF_TAG_LEN]
    if expect != tag:
        raise KeyAgreementError("hand-off tag mismatch")
    block = frames.decrypt_payload(chan.chan_enc, dev_addr, seq,
                                   frames.DIR_UP, ciphertext)
    if len(block) != 2 * KEY_LEN:
        raise KeyAgreementError("hand-off block has wrong length")
    return EdgeSessionKeys(
        edge_s_enc_key=block[:KEY_LEN],
        edge_s_int_key=block[KEY_LEN:],
        dev_addr=dev_addr,
        assigned_gw=assigned_gw,
    )


def establish_group_key(
    device_eph: EcKeyPair,
    gw_eph: EcKeyPair,
    gw_as_channel: GwAsChannelKeys,
    dev_addr: int,
    join_nonce: int,
    gw_id: str,
    handoff_seq: int = 0,
) -> tuple[EdgeSessionKeys, EdgeSessionKeys, EdgeSessionKeys]:
    """Full protocol transcript yielding the three byte-identical key copies.

    The gateway derives from (its ephemeral private, device public), ships the
    keys to the AS sealed under the channel keys, and returns its ephemeral
    public key to the device, which derives the same keys independently.
    """
    gw_keys = derive_edge_keys(dh_shared(gw_eph.private, device_eph.public),
                               dev_addr, join_nonce, gw_id)
    ct, tag = seal_handoff(gw_as_channel, gw_keys, handoff_seq)
    as_keys = open_handoff(gw_as_channel, dev_addr, handoff_seq, ct, tag, gw_id)
    dev_keys = derive_edge_keys(dh_shared(device_eph.private, gw_eph.public),
                                dev_addr, join_nonce, gw_id)
    return dev_keys, gw_keys, as_keys
