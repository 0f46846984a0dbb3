#!/usr/bin/env python3
"""Writes the MEB1 fixture files and their manifest. Run from this directory."""
import json
import struct
import zlib


def meb(encoder_id, rate_hz, dims, frames, value):
    payload = b"".join(
        struct.pack("<f", value(t, d)) for t in range(frames) for d in range(dims)
    )
    eid = encoder_id.encode()
    head = b"MEB1" + struct.pack("<HH", 1, len(eid)) + eid
    head += struct.pack("<fII", rate_hz, dims, frames)
    return head + payload + struct.pack("<I", zlib.crc32(payload))


# 2.0 s clip: wavlm at 50 Hz (3 dims), m2d at 25 Hz (2 dims)
files = {
    "clip.wavlm.meb": meb("wavlm", 50.0, 3, 100, lambda t, d: t * 0.25 - d * 0.5),
    "clip.m2d.meb": meb("m2d", 25.0, 2, 50, lambda t, d: (d + 1) * 1.5 - t * 0.125),
}
for name, data in files.items():
    with open(name, "wb") as f:
        f.write(data)

bad = bytearray(files["clip.m2d.meb"])
bad[-1] ^= 0xFF
with open("bad_crc.m2d.meb", "wb") as f:
    f.write(bad)

with open("manifest.jsonl", "w") as f:
    f.write(json.dumps({"manifest_version": 1, "score_min": 1.0, "score_max": 10.0}) + "\n")
    f.write(json.dumps({
        "utt_id": "clip", "system_id": "sysA",
        "pq": 7.5, "pc": 3.0, "ce": 6.25, "cu": 5.0, "duration_s": 2.0,
        "emb.wavlm": "clip.wavlm.meb", "emb.m2d": "clip.m2d.meb",
    }) + "\n")
