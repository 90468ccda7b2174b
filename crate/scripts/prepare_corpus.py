#!/usr/bin/env python3
"""Builds data/corpus.txt.gz: public-domain English text, one tokenized
sentence per line, case preserved.

Sources (fetched from the package registries):
  - Shakespeare plays and poems (PyPI `shakespeare` 0.6, Project Gutenberg texts)
  - King James Bible (npm `kjv` 1.0.0)
  - Norvig's big.txt, a Project Gutenberg sample (npm `spelling-corrector` 3.0.0)
"""
import gzip
import io
import json
import pathlib
import random
import re
import subprocess
import sys
import tarfile
import tempfile

TOKEN = re.compile(r"[A-Za-z]+(?:'[A-Za-z]+)*|\d+(?:[.,]\d+)*|[^\w\s]")
SENT_END = {".", "!", "?"}
MAX_LEN = 80


def fetch(tmp: pathlib.Path):
    subprocess.run([sys.executable, "-m", "pip", "download", "shakespeare==0.6",
                    "--no-deps", "-d", str(tmp)], check=True, capture_output=True)
    for pkg in ["kjv@1.0.0", "spelling-corrector@3.0.0"]:
        subprocess.run(["npm", "pack", pkg], cwd=tmp, check=True, capture_output=True)
    return tmp


def tokenize(text):
    """Yields token lists, one per sentence."""
    sent = []
    for tok in TOKEN.findall(text):
        sent.append(tok)
        if tok in SENT_END:
            yield sent
            sent = []
    if sent:
        yield sent


def paragraphs(text):
    for para in re.split(r"\n\s*\n", text):
        para = " ".join(para.split())
        if para:
            yield para


def shakespeare(tmp):
    with tarfile.open(next(tmp.glob("shakespeare-*.tar.gz"))) as tar:
        for m in sorted(tar.getmembers(), key=lambda m: m.name):
            name = pathlib.Path(m.name).name
            # modern-spelling editions only; *_gut_f.txt are First Folio duplicates
            if "/texts/" in m.name and name.endswith("_gut.txt"):
                yield tar.extractfile(m).read().decode("utf-8", "replace")


def kjv(tmp):
    with tarfile.open(tmp / "kjv-1.0.0.tgz") as tar:
        verses = json.load(tar.extractfile("package/json/verses-1769.json"))
    yield "\n\n".join(v.replace("[", "").replace("]", "").replace("#", "")
                      for v in verses.values())


def big(tmp):
    with tarfile.open(tmp / "spelling-corrector-3.0.0.tgz") as tar:
        yield tar.extractfile("package/src/big.txt").read().decode("utf-8", "replace")


def main():
    out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "data/corpus.txt.gz")
    with tempfile.TemporaryDirectory() as d:
        tmp = fetch(pathlib.Path(d))
        sentences = []
        for source in (shakespeare, kjv, big):
            for text in source(tmp):
                for para in paragraphs(text):
                    for s in tokenize(para):
                        if 2 <= len(s) <= MAX_LEN:
                            sentences.append(" ".join(s))
    n_tokens = sum(len(s.split()) for s in sentences)
    out.parent.mkdir(parents=True, exist_ok=True)
    # mtime=0 keeps the archive byte-reproducible
    with open(out, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as gz:
        gz.write(("\n".join(sentences) + "\n").encode("utf-8"))
    print(f"{len(sentences)} sentences, {n_tokens} tokens -> {out}", file=sys.stderr)


if __name__ == "__main__":
    main()
