#!/usr/bin/env python3
"""Generate the frozen known-answer vectors in tests/data/crypto_vectors.json.

Everything here is computed independently of src/edgelora: the CMAC below is
implemented from the AES primitive (RFC 4493 subkey schedule, checked against
the published RFC vectors), the counter-mode keystream blocks are assembled by
hand, and the X25519 vector is the published RFC 7748 section 6.1 pair,
re-verified against the library before freezing.

Run from the repo root:  python scripts/make_crypto_vectors.py
"""

import json
import pathlib

from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes


def aes_ecb(key: bytes, block: bytes) -> bytes:
    assert len(block) == 16
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


# --- independent AES-CMAC (RFC 4493) ---------------------------------------

def _dbl(block: bytes) -> bytes:
    n = int.from_bytes(block, "big") << 1
    if block[0] & 0x80:
        n ^= 0x87
    return (n & ((1 << 128) - 1)).to_bytes(16, "big")


def cmac(key: bytes, msg: bytes) -> bytes:
    k1 = _dbl(aes_ecb(key, bytes(16)))
    k2 = _dbl(k1)
    if msg and len(msg) % 16 == 0:
        blocks = [msg[i:i + 16] for i in range(0, len(msg), 16)]
        blocks[-1] = bytes(a ^ b for a, b in zip(blocks[-1], k1))
    else:
        padded = msg + b"\x80" + bytes(15 - (len(msg) % 16))
        blocks = [padded[i:i + 16] for i in range(0, len(padded), 16)]
        blocks[-1] = bytes(a ^ b for a, b in zip(blocks[-1], k2))
    x = bytes(16)
    for b in blocks:
        x = aes_ecb(key, bytes(p ^ q for p, q in zip(x, b)))
    return x


def selfcheck_cmac() -> None:
    # RFC 4493 test vectors
    k = bytes.fromhex("2b7e151628aed2a6abf7158809cf4f3c")
    assert cmac(k, b"").hex() == "bb1d6929e95937287fa37d129b756746"
    assert cmac(k, bytes.fromhex("6bc1bee22e409f96e93d7e117393172a")).hex() == \
        "070a16b46b4d4144f79bdd9dd04a287c"


# --- counter-mode keystream block, assembled by hand ------------------------

def ctr_block(direction: int, dev_addr: int, fcnt: int, index: int) -> bytes:
    return (
        b"\x01"
        + bytes(4)
        + bytes([direction])
        + dev_addr.to_bytes(4, "little")
        + fcnt.to_bytes(4, "little")
        + b"\x00"
        + bytes([index])
    )


def payload_keystream(key: bytes, direction: int, dev_addr: int, fcnt: int,
                      nbytes: int) -> bytes:
    out = b""
    i = 1
    while len(out) < nbytes:
        out += aes_ecb(key, ctr_block(direction, dev_addr, fcnt, i))
        i += 1
    return out[:nbytes]


def mic_prefix(direction: int, dev_addr: int, fcnt: int, msg_len: int) -> bytes:
    return (
        b"\x49"
        + bytes(4)
        + bytes([direction])
        + dev_addr.to_bytes(4, "little")
        + fcnt.to_bytes(4, "little")
        + b"\x00"
        + bytes([msg_len])
    )


def main() -> None:
    selfcheck_cmac()

    vectors = {}

    # payload encryption: key of sixteen 0x01 bytes, uplink, zero plaintext
    key = bytes([0x01] * 16)
    dev_addr, fcnt = 0x01020304, 1
    plaintext = bytes(16)
    ks = payload_keystream(key, 0, dev_addr, fcnt, len(plaintext))
    ct = bytes(a ^ b for a, b in zip(plaintext, ks))
    vectors["payload_ctr"] = {
        "key": key.hex(),
        "dev_addr": dev_addr,
        "fcnt": fcnt,
        "direction": 0,
        "plaintext": plaintext.hex(),
        "ciphertext": ct.hex(),
    }

    # frame MIC: all-zero key, one byte of message
    zkey = bytes(16)
    msg = b"\xab"
    full = cmac(zkey, mic_prefix(0, 0, 0, len(msg)) + msg)
    vectors["frame_mic"] = {
        "key": zkey.hex(),
        "dev_addr": 0,
        "fcnt": 0,
        "direction": 0,
        "message": msg.hex(),
        "mic": full[:4].hex(),
    }

    # raw CMAC answers, for checking any reimplementation directly
    k4493 = bytes.fromhex("2b7e151628aed2a6abf7158809cf4f3c")
    vectors["cmac_rfc4493"] = {
        "key": k4493.hex(),
        "cases": [
            {"message": "", "mac": cmac(k4493, b"").hex()},
            {"message": "6bc1bee22e409f96e93d7e117393172a",
             "mac": cmac(k4493, bytes.fromhex("6bc1bee22e409f96e93d7e117393172a")).hex()},
        ],
    }

    # X25519: RFC 7748 section 6.1 Diffie-Hellman pair, re-verified here
    a_priv = bytes.fromhex(
        "77076d0a7318a57d3c16c17251b26645df4c2f87ebc0992ab177fba51db92c2a")
    b_priv = bytes.fromhex(
        "5dab087e624a8a4b79e17f8b83800ee66f3bb1292618b6fd1c2f8b27ff88e0eb")
    a_pub_expect = "8520f0098930a754748b7ddcb43ef75a0dbf3a0d26381af4eba4a98eaa9b4e6a"
    b_pub_expect = "de9edb7d7b7dc1b4d35b61c2ece435373f8343c85b78674dadfc7e146f882b4f"
    shared_expect = "4a5d9d5ba4ce2de1728e3bf480350f25e07e21c947d19e3376f09b3c1e161742"

    from cryptography.hazmat.primitives.serialization import (
        Encoding, PublicFormat)
    ka = X25519PrivateKey.from_private_bytes(a_priv)
    kb = X25519PrivateKey.from_private_bytes(b_priv)
    a_pub = ka.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    b_pub = kb.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    assert a_pub.hex() == a_pub_expect
    assert b_pub.hex() == b_pub_expect
    assert ka.exchange(kb.public_key()).hex() == shared_expect
    assert kb.exchange(ka.public_key()).hex() == shared_expect
    vectors["x25519"] = {
        "a_private": a_priv.hex(),
        "a_public": a_pub_expect,
        "b_private": b_priv.hex(),
        "b_public": b_pub_expect,
        "shared": shared_expect,
    }

    out = pathlib.Path(__file__).resolve().parent.parent / "tests" / "data" / "crypto_vectors.json"
    out.write_text(json.dumps(vectors, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
