"""Walk through the on-disk latent store format.

Generates a small aligned pair set, writes it out, pokes at the binary
header, and demonstrates that the reader refuses silently corrupted files.
Run from the repository root:

    python3 demos/latent_store_walkthrough.py
"""

import struct
import tempfile
from pathlib import Path

import numpy as np

from fusealign import store as st

SEED = 7
N_PAIRS = 200


def main():
    work = Path(tempfile.mkdtemp(prefix="latent-store-"))
    rows_x, rows_y = st.synth_aligned(N_PAIRS, dim_x=32, dim_y=24,
                                      dim_latent=6, noise_sigma=0.02,
                                      seed=SEED)
    manifest = st.write_store(rows_x, rows_y, ("demo-enc-x", "demo-enc-y"),
                              work)
    print(f"wrote {manifest.count} pairs under {work}")
    print(f"  checksum_x = {manifest.checksum_x}")
    print(f"  checksum_y = {manifest.checksum_y}")

    # the fixed-size header is plain little-endian struct data
    raw = (work / st.FILE_X).read_bytes()[:st.HEADER_SIZE]
    magic, version, dim, count, tag = struct.unpack("<4sIIQ16s", raw)
    print("\nheader of", st.FILE_X)
    print(f"  magic={magic!r} version={version} dim={dim} count={count}")
    print(f"  tag={tag.rstrip(bytes(1)).decode()!r}")

    handle = st.open_store(work / st.MANIFEST)
    back_x, back_y = handle.read_all()
    print("\nround trip is bit-exact:",
          np.array_equal(back_x, rows_x) and np.array_equal(back_y, rows_y))

    # flip one payload byte; the checksum in the manifest catches it
    payload = bytearray((work / st.FILE_Y).read_bytes())
    payload[st.HEADER_SIZE + 123] ^= 0x40
    (work / st.FILE_Y).write_bytes(payload)
    try:
        st.open_store(work / st.MANIFEST)
    except st.StoreError as exc:
        print(f"\ncorrupted file rejected: {exc}")

    # restore and iterate one epoch of batches
    st.write_store(rows_x, rows_y, ("demo-enc-x", "demo-enc-y"), work)
    handle = st.open_store(work / st.MANIFEST)
    sizes = [batch.z_x.shape[0] for batch in st.epoch_batches(handle, 64, seed=0)]
    print(f"\none epoch at 64 rows/batch -> {len(sizes)} batches, "
          f"{sum(sizes)}/{handle.count} rows used (trailing partial dropped)")


if __name__ == "__main__":
    main()
