#!/usr/bin/env python3
"""Fetch MovieLens-100K into data/ml-100k as u.data, u.user and u.item.

Tries the GroupLens archive first. When that host is unreachable, rebuilds the
same three files from the copy of ML-100K bundled in the RecBole wheel on PyPI.
"""
import io
import os
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
GENRES = [
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy",
    "Crime", "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror",
    "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
]


def from_grouplens(out):
    with urllib.request.urlopen(GROUPLENS, timeout=30) as resp:
        archive = zipfile.ZipFile(io.BytesIO(resp.read()))
    for name in ("u.data", "u.user", "u.item"):
        with open(os.path.join(out, name), "wb") as fh:
            fh.write(archive.read("ml-100k/" + name))


def from_recbole(out):
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.check_call(
            [sys.executable, "-m", "pip", "download", "recbole==1.2.1",
             "--no-deps", "-q", "-d", tmp])
        wheel = next(f for f in os.listdir(tmp) if f.endswith(".whl"))
        archive = zipfile.ZipFile(os.path.join(tmp, wheel))
        base = "recbole/dataset_example/ml-100k/ml-100k."

        def rows(kind):
            lines = archive.read(base + kind).decode("latin-1").splitlines()
            return [line.split("\t") for line in lines[1:] if line]

        with open(os.path.join(out, "u.data"), "w", encoding="latin-1") as fh:
            for user, item, rating, ts in rows("inter"):
                fh.write(f"{user}\t{item}\t{int(float(rating))}\t{int(float(ts))}\n")
        with open(os.path.join(out, "u.user"), "w", encoding="latin-1") as fh:
            for user, age, gender, occupation, zip_code in rows("user"):
                fh.write(f"{user}|{age}|{gender}|{occupation}|{zip_code}\n")
        with open(os.path.join(out, "u.item"), "w", encoding="latin-1") as fh:
            for item, title, year, classes in rows("item"):
                tags = set(classes.split())
                flags = "|".join("1" if g in tags else "0" for g in GENRES)
                date = f"01-Jan-{year}" if year else ""
                label = f"{title} ({year})" if year else title
                fh.write(f"{item}|{label}|{date}||unknown|{flags}\n")


def main():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(root, "data", "ml-100k")
    os.makedirs(out, exist_ok=True)
    try:
        from_grouplens(out)
        print(f"downloaded ML-100K from GroupLens into {out}")
    except Exception as err:  # noqa: BLE001
        print(f"GroupLens unavailable ({err}); rebuilding from the RecBole wheel")
        from_recbole(out)
        print(f"wrote ML-100K into {out}")


if __name__ == "__main__":
    main()
