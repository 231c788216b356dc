"""Byte-exact codecs and integrity/confidentiality primitives for the air interface.

Uplink data frames follow the classic LoRaWAN 1.0.x layout so that the legacy
network path stays realistic:

    MHDR | DevAddr(4, LE) | FCtrl | FCnt(2, LE) | FPort | FRMPayload | MIC(4)

FRMPayload confidentiality uses the AES-128 counter construction with
per-block A blocks, the MIC is the 4-byte truncation of AES-CMAC over a
length-prefixed B0 block plus the serialized frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.cmac import CMAC as _CMAC

MHDR_JOIN_REQUEST = 0x00
MHDR_JOIN_ACCEPT = 0x20
MHDR_DATA_UP = 0x40

DIR_UP = 0
DIR_DOWN = 1

FPORT_SENSOR_DATA = 1
FPORT_EDGE_JOIN = 8

MAX_PAYLOAD = 222
_HEADER_LEN = 9  # MHDR + DevAddr + FCtrl + FCnt + FPort
MIC_LEN = 4


class FrameError(ValueError):
    """Malformed or unverifiable frame bytes."""


class MicError(FrameError):
    """Integrity code does not match."""


def aes_encrypt_block(key: bytes, block: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def aes_decrypt_block(key: bytes, block: bytes) -> bytes:
    dec = Cipher(algorithms.AES(key), modes.ECB()).decryptor()
    return dec.update(block) + dec.finalize()


def aes_cmac(key: bytes, msg: bytes) -> bytes:
    c = _CMAC(algorithms.AES(key))
    c.update(msg)
    return c.finalize()


@dataclass(frozen=True)
class UplinkFrame:
    """One data uplink as it travels over the air (payload already encrypted)."""

    mhdr: int
    dev_addr: int
    fctrl: int
    fcnt: int
    fport: int
    frm_payload: bytes
    mic: bytes

    def header_bytes(self) -> bytes:
        return bytes([self.mhdr]) \
            + self.dev_addr.to_bytes(4, "little") \
            + bytes([self.fctrl]) \
            + self.fcnt.to_bytes(2, "little") \
            + bytes([self.fport])


def encode_uplink(frame: UplinkFrame) -> bytes:
    """Serialize a frame; length is always 13 + len(frm_payload)."""
    return frame.header_bytes() + frame.frm_payload + frame.mic


def decode_uplink(data: bytes) -> UplinkFrame:
    if len(data) < _HEADER_LEN + MIC_LEN:
        raise FrameError(f"frame too short: {len(data)} bytes")
    if data[0] != MHDR_DATA_UP:
        raise FrameError(f"not a data uplink (mhdr=0x{data[0]:02x})")
    return UplinkFrame(
        mhdr=data[0],
        dev_addr=int.from_bytes(data[1:5], "little"),
        fctrl=data[5],
        fcnt=int.from_bytes(data[6:8], "little"),
        fport=data[8],
        frm_payload=data[_HEADER_LEN:-MIC_LEN],
        mic=data[-MIC_LEN:],
    )


def _a_block(direction: int, dev_addr: int, fcnt: int, index: int) -> bytes:
    return (
        b"\x01"
        + bytes(4)
        + bytes([direction])
        + dev_addr.to_bytes(4, "little")
        + fcnt.to_bytes(4, "little")
        + b"\x00"
        + bytes([index])
    )


def encrypt_payload(key: bytes, dev_addr: int, fcnt: int, direction: int,
                    plaintext: bytes) -> bytes:
    """Counter-mode XOR keyed on (direction, dev_addr, fcnt, block index).

    The operation is its own inverse under identical parameters.
    """
    if len(plaintext) > MAX_PAYLOAD:
        raise FrameError(f"payload too long: {len(plaintext)} > {MAX_PAYLOAD}")
    if not plaintext:
        return b""
    stream = b""
    index = 1
    while len(stream) < len(plaintext):
        stream += aes_encrypt_block(key, _a_block(direction, dev_addr, fcnt, index))
        index += 1
    return bytes(p ^ s for p, s in zip(plaintext, stream))


decrypt_payload = encrypt_payload


def _b0(direction: int, dev_addr: int, fcnt: int, msg_len: int) -> bytes:
    return (
        b"\x49"
        + bytes(4)
        + bytes([direction])
        + dev_addr.to_bytes(4, "little")
        + fcnt.to_bytes(4, "little")
        + b"\x00"
        + bytes([msg_len & 0xFF])
    )


def compute_mic(key: bytes, dev_addr: int, fcnt: int, direction: int,
                msg: bytes) -> bytes:
    """First 4 bytes of AES-CMAC over B0 || msg, msg being header+payload as on the wire."""
    return aes_cmac(key, _b0(direction, dev_addr, fcnt, len(msg)) + msg)[:MIC_LEN]


def make_uplink(nwk_key: bytes, dev_addr: int, fcnt: int, fport: int,
                encrypted_payload: bytes, fctrl: int = 0) -> UplinkFrame:
    """Assemble a frame around an already-encrypted payload and compute its MIC."""
    frame = UplinkFrame(MHDR_DATA_UP, dev_addr, fctrl, fcnt, fport,
                        encrypted_payload, b"\x00" * MIC_LEN)
    mic = compute_mic(nwk_key, dev_addr, fcnt, DIR_UP,
                      frame.header_bytes() + encrypted_payload)
    return UplinkFrame(MHDR_DATA_UP, dev_addr, fctrl, fcnt, fport,
                       encrypted_payload, mic)


def verify_mic(nwk_key: bytes, frame: UplinkFrame) -> bool:
    expect = compute_mic(nwk_key, frame.dev_addr, frame.fcnt, DIR_UP,
                         frame.header_bytes() + frame.frm_payload)
    return expect == frame.mic


# --- join request / accept ---------------------------------------------------

JOIN_REQUEST_LEN = 23


@dataclass(frozen=True)
class JoinRequest:
    join_eui: bytes
    dev_eui: bytes
    dev_nonce: int
    mic: bytes

    def body(self) -> bytes:
        return bytes([MHDR_JOIN_REQUEST]) + self.join_eui + self.dev_eui \
            + self.dev_nonce.to_bytes(2, "little")


def make_join_request(root_key: bytes, join_eui: bytes, dev_eui: bytes,
                      dev_nonce: int) -> JoinRequest:
    req = JoinRequest(join_eui, dev_eui, dev_nonce, b"")
    return JoinRequest(join_eui, dev_eui, dev_nonce, aes_cmac(root_key, req.body())[:MIC_LEN])


def encode_join_request(req: JoinRequest) -> bytes:
    return req.body() + req.mic


def decode_join_request(data: bytes) -> JoinRequest:
    if len(data) != JOIN_REQUEST_LEN:
        raise FrameError(f"join request must be {JOIN_REQUEST_LEN} bytes, got {len(data)}")
    if data[0] != MHDR_JOIN_REQUEST:
        raise FrameError(f"not a join request (mhdr=0x{data[0]:02x})")
    return JoinRequest(
        join_eui=data[1:9],
        dev_eui=data[9:17],
        dev_nonce=int.from_bytes(data[17:19], "little"),
        mic=data[19:23],
    )


def verify_join_request(root_key: bytes, req: JoinRequest) -> bool:
    return aes_cmac(root_key, req.body())[:MIC_LEN] == req.mic


@dataclass(frozen=True)
class JoinAccept:
    join_nonce: int  # 24-bit
    dev_addr: int
    settings: bytes  # 2 opaque bytes, zero in this artifact

    def body(self) -> bytes:
        return self.join_nonce.to_bytes(3, "little") \
            + self.dev_addr.to_bytes(4, "little") + self.settings


def encode_join_accept(root_key: bytes, accept: JoinAccept) -> bytes:
    """MHDR plus one AES block: body, MIC over MHDR||body, zero padding."""
    mic = aes_cmac(root_key, bytes([MHDR_JOIN_ACCEPT]) + accept.body())[:MIC_LEN]
    block = accept.body() + mic
    block += bytes(16 - len(block))
    return bytes([MHDR_JOIN_ACCEPT]) + aes_encrypt_block(root_key, block)


def decode_join_accept(root_key: bytes, data: bytes) -> JoinAccept:
    """Decrypt-then-verify; fails unless encoded under the same root key."""
    if len(data) != 17 or data[0] != MHDR_JOIN_ACCEPT:
        raise FrameError("malformed join accept")
    block = aes_decrypt_block(root_key, data[1:])
    accept = JoinAccept(
        join_nonce=int.from_bytes(block[0:3], "little"),
        dev_addr=int.from_bytes(block[3:7], "little"),
        settings=block[7:9],
    )
    mic = block[9:13]
    if block[13:] != bytes(3):
        raise MicError("join accept padding not zero")
    if aes_cmac(root_key, bytes([MHDR_JOIN_ACCEPT]) + accept.body())[:MIC_LEN] != mic:
        raise MicError("join accept MIC mismatch")
    return accept


# --- edge join payload (rides on FPORT_EDGE_JOIN) ----------------------------

class EdgeRole(IntEnum):
    DEVICE = 0
    GATEWAY = 1


@dataclass(frozen=True)
class EdgeJoinPayload:
    """Ephemeral curve public key plus the sender's role; exactly 33 bytes."""

    ephemeral_pub: bytes
    role: EdgeRole


def encode_edge_join(payload: EdgeJoinPayload) -> bytes:
    if len(payload.ephemeral_pub) != 32:
        raise FrameError("ephemeral public key must be 32 bytes")
    return payload.ephemeral_pub + bytes([payload.role])


def decode_edge_join(data: bytes) -> EdgeJoinPayload:
    if len(data) != 33:
        raise FrameError(f"edge join payload must be 33 bytes, got {len(data)}")
    if data[32] not in (EdgeRole.DEVICE, EdgeRole.GATEWAY):
        raise FrameError(f"unknown edge role {data[32]}")
    return EdgeJoinPayload(ephemeral_pub=data[:32], role=EdgeRole(data[32]))
