#!/usr/bin/env python3
"""Assemble MovieLens-1m as one ``user\\titem\\trating\\ttimestamp`` file.

The ratings ship inside the ``neurec`` wheel on PyPI as a leave-one-out
train/test pair; concatenating the two gives back all 1,000,209 ratings.
If you already have the GroupLens ``ratings.dat`` just point ``ML1M_PATH``
at it instead, the loader detects the ``::`` separator.
"""
import argparse
import glob
import os
import subprocess
import sys
import tempfile
import zipfile

MEMBERS = ("neurec/dataset/ml-1m.train.rating", "neurec/dataset/ml-1m.test.rating")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="/root/data/ml1m_all.tsv")
    args = ap.parse_args(argv)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "neurec", "-d", tmp, "-q"], check=True)
        wheel = glob.glob(os.path.join(tmp, "*.whl"))[0]
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        count = 0
        with zipfile.ZipFile(wheel) as z, open(args.out, "wb") as out:
            for name in MEMBERS:
                data = z.read(name)
                if not data.endswith(b"\n"):
                    data += b"\n"
                out.write(data)
                count += data.count(b"\n")
    print(f"wrote {count} ratings to {args.out}")


if __name__ == "__main__":
    main()
