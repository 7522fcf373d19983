"""Discrete vocabulary for image/state/action modalities and the JSONL release format.

Layout of the default 29163-id vocabulary (content modalities first, in sample
order, then 30 special ids)::

    image       0      .. 8191
    latitude    8192   .. 14914
    longitude   14915  .. 24914
    month       24915  .. 24926
    year        24927  .. 24957
    distance    24958  .. 25458
    heading     25459  .. 29059   (last bin, 360.0, is reserved)
    d_month     29060  .. 29071
    d_year      29072  .. 29132
    specials    29133  .. 29162

A sample is encoded as::

    <img> image*1024 </img> <state> lat lon month year </state>
    <action> distance heading d_month d_year </action>

and a sentence as ``<bos> sample* <eos>``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import (IO, Dict, Iterable, Iterator, List, Mapping, Optional, Protocol,
                    Sequence, Tuple, Union)

import numpy as np

IMAGE_TOKENS = 1024
IMAGE_VOCAB = 8192

SPECIAL_NAMES = (
    "<bos>", "<eos>", "<img>", "</img>", "<state>", "</state>",
    "<action>", "</action>", "<pad>",
) + tuple(f"<reserved_{i}>" for i in range(21))

STATE_FIELDS = ("latitude", "longitude", "month", "year")
ACTION_FIELDS = ("distance", "heading", "d_month", "d_year")
NUMERIC_MODALITIES = STATE_FIELDS + ACTION_FIELDS
SAMPLE_LENGTH = IMAGE_TOKENS + len(NUMERIC_MODALITIES) + 6


class VocabError(ValueError):
    pass


class OutOfRangeError(VocabError):
    pass


class TokenDecodeError(VocabError):
    pass


# name: (min, declared max, precision, explicit bin count or None, circular period or None)
DEFAULT_RANGES: Dict[str, Tuple[float, float, float, Optional[int], Optional[float]]] = {
    "latitude": (37.50555, 37.57277, 1e-5, 6723, None),
    "longitude": (-122.34916, -122.249168, 1e-5, 10000, None),
    "month": (1, 12, 1, 12, None),
    "year": (2000, 2030, 1, 31, None),
    "distance": (0.0, 50.0, 0.1, 501, None),
    "heading": (0.0, 359.9, 0.1, 3601, 360.0),
    "d_month": (0, 11, 1, 12, None),
    "d_year": (-30, 30, 1, 61, None),
}


@dataclass(frozen=True)
class Modality:
    name: str
    offset: int
    size: int
    min: float = 0.0
    max: float = 0.0
    precision: float = 1.0
    period: Optional[float] = None

    @property
    def integral(self) -> bool:
        return float(self.precision).is_integer() and float(self.min).is_integer()

    def bin_of(self, value: float) -> int:
        v = float(value)
        if not math.isfinite(v):
            raise OutOfRangeError(f"{self.name}: non-finite value {value!r}")
        if self.period is not None:
            v = v % self.period
            idx = round((v - self.min) / self.precision)
            reachable = round(self.period / self.precision)
            return 0 if idx >= reachable else idx
        half = self.precision / 2
        if v < self.min - half - 1e-9 * self.precision or v > self.max + half + 1e-9 * self.precision:
            raise OutOfRangeError(f"{self.name}: value {value!r} outside [{self.min}, {self.max}]")
        idx = round((v - self.min) / self.precision)
        return min(max(idx, 0), self.size - 1)

    def center(self, idx: int) -> float:
        c = self.min + idx * self.precision
        if self.integral:
            return int(round(c))
        # strip the float noise of min + idx*precision
        digits = max(0, -int(math.floor(math.log10(self.precision))))
        return round(c, digits + 2)

    def to_json(self) -> dict:
        return {"name": self.name, "offset": self.offset, "size": self.size, "min": self.min,
                "max": self.max, "precision": self.precision, "period": self.period}


@dataclass(frozen=True)
class TokenVocab:
    modalities: Tuple[Modality, ...]
    specials: Tuple[str, ...]
    special_offset: int
    by_name: Dict[str, Modality] = field(compare=False, repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "by_name", {m.name: m for m in self.modalities})

    @property
    def size(self) -> int:
        return self.special_offset + len(self.specials)

    def __getitem__(self, name: str) -> Modality:
        return self.by_name[name]

    def special(self, name: str) -> int:
        return self.special_offset + self.specials.index(name)

    def modality_of(self, token: int) -> Modality:
        for m in self.modalities:
            if m.offset <= token < m.offset + m.size:
                return m
        raise TokenDecodeError(f"token {token} is not a content token")

    def manifest(self) -> dict:
        return {
            "size": self.size,
            "modalities": [m.to_json() for m in self.modalities],
            "specials": {name: self.special_offset + i for i, name in enumerate(self.specials)},
        }


def build_vocab(ranges: Optional[Mapping[str, Sequence]] = None,
                image_vocab: int = IMAGE_VOCAB,
                specials: Sequence[str] = SPECIAL_NAMES) -> TokenVocab:
    """Lay out contiguous id blocks for every modality.

    ``ranges`` maps modality name to ``(min, max, precision[, count[, period]])``;
    missing names take the default table values.
    """
    cfg = dict(DEFAULT_RANGES)
    for name, spec in (ranges or {}).items():
        if name not in cfg:
            raise VocabError(f"unknown modality {name!r}")
        spec = tuple(spec) + (None,) * (5 - len(spec))
        cfg[name] = spec  # type: ignore[assignment]
    mods = [Modality("image", 0, image_vocab)]
    offset = image_vocab
    for name in NUMERIC_MODALITIES:
        lo, hi, prec, count, period = cfg[name]
        if prec is None or prec <= 0 or hi < lo:
            raise VocabError(f"{name}: inconsistent range ({lo}, {hi}, {prec})")
        needed = math.floor((hi - lo) / prec + 1e-6) + 1
        if count is None:
            count = needed
        elif count < needed:
            raise VocabError(f"{name}: {count} bins cannot cover [{lo}, {hi}] at precision {prec}"
                             f" (needs {needed})")
        mods.append(Modality(name, offset, int(count), lo, hi, prec, period))
        offset += int(count)
    return TokenVocab(tuple(mods), tuple(specials), offset)


DEFAULT_VOCAB = build_vocab()


def encode_value(modality: str, value: float, vocab: TokenVocab = DEFAULT_VOCAB) -> int:
    m = vocab[modality]
    if modality == "image":
        v = int(value)
        if not 0 <= v < m.size:
            raise OutOfRangeError(f"image token {value} outside [0, {m.size})")
        return v
    return m.offset + m.bin_of(value)


def decode_token(token: int, vocab: TokenVocab = DEFAULT_VOCAB) -> Tuple[str, float]:
    if not 0 <= token < vocab.size:
        raise TokenDecodeError(f"token {token} outside vocabulary of {vocab.size}")
    if token >= vocab.special_offset:
        return "special", vocab.specials[token - vocab.special_offset]  # type: ignore[return-value]
    m = vocab.modality_of(token)
    if m.name == "image":
        return "image", token
    return m.name, m.center(token - m.offset)


# -- samples ---------------------------------------------------------------

@dataclass(frozen=True)
class Action:
    distance: float = 0.0
    heading: float = 0.0
    d_month: int = 0
    d_year: int = 0

    @property
    def months(self) -> int:
        return 12 * self.d_year + self.d_month

    def to_json(self) -> dict:
        return {"distance": self.distance, "heading": self.heading,
                "d_month": self.d_month, "d_year": self.d_year}


ZERO_ACTION = Action()


@dataclass(frozen=True)
class State:
    lat: float
    lon: float
    month: int
    year: int

    @property
    def months(self) -> int:
        return 12 * self.year + self.month - 1


@dataclass(frozen=True)
class Sample:
    image_tokens: Tuple[int, ...]
    state: State
    action: Action


def encode_sample(s: Sample, vocab: TokenVocab = DEFAULT_VOCAB) -> List[int]:
    if len(s.image_tokens) != IMAGE_TOKENS:
        raise OutOfRangeError(f"image_tokens: expected {IMAGE_TOKENS} ids, got {len(s.image_tokens)}")
    img = vocab["image"]
    if min(s.image_tokens) < 0 or max(s.image_tokens) >= img.size:
        bad = next(t for t in s.image_tokens if not 0 <= t < img.size)
        raise OutOfRangeError(f"image_tokens: id {bad} outside [0, {img.size})")
    sp = vocab.special
    off = img.offset
    out = [sp("<img>")]
    out.extend(s.image_tokens if off == 0 else [off + t for t in s.image_tokens])
    out.append(sp("</img>"))
    st, ac = s.state, s.action
    out.append(sp("<state>"))
    for name, v in zip(STATE_FIELDS, (st.lat, st.lon, st.month, st.year)):
        out.append(vocab[name].offset + vocab[name].bin_of(v))
    out.append(sp("</state>"))
    out.append(sp("<action>"))
    for name, v in zip(ACTION_FIELDS, (ac.distance, ac.heading, ac.d_month, ac.d_year)):
        out.append(vocab[name].offset + vocab[name].bin_of(v))
    out.append(sp("</action>"))
    return out


def _expect(tokens: Sequence[int], i: int, want: int, vocab: TokenVocab) -> None:
    if i >= len(tokens):
        raise TokenDecodeError(f"truncated sample: expected {vocab.specials[want - vocab.special_offset]}"
                               f" at position {i}, got end of input")
    if tokens[i] != want:
        raise TokenDecodeError(f"expected {vocab.specials[want - vocab.special_offset]} at position {i},"
                               f" got {tokens[i]}")


def _field(tokens: Sequence[int], i: int, name: str, vocab: TokenVocab) -> float:
    if i >= len(tokens):
        raise TokenDecodeError(f"truncated sample: missing {name} at position {i}")
    m = vocab[name]
    t = tokens[i]
    if not m.offset <= t < m.offset + m.size:
        raise TokenDecodeError(f"position {i}: token {t} is not a {name} token")
    return m.center(t - m.offset)


def decode_sample(tokens: Sequence[int], vocab: TokenVocab = DEFAULT_VOCAB,
                  start: int = 0) -> Tuple[Sample, int]:
    """Decode one sample beginning at ``start``; returns (sample, next position)."""
    i = start
    _expect(tokens, i, vocab.special("<img>"), vocab)
    img = vocab["image"]
    body = tokens[i + 1:i + 1 + IMAGE_TOKENS]
    if len(body) < IMAGE_TOKENS:
        raise TokenDecodeError(f"truncated sample: {len(body)} of {IMAGE_TOKENS} image tokens")
    if min(body) < img.offset or max(body) >= img.offset + img.size:
        k, t = next((k, t) for k, t in enumerate(body) if not img.offset <= t < img.offset + img.size)
        raise TokenDecodeError(f"position {i + 1 + k}: token {t} is not an image token")
    i += 1 + IMAGE_TOKENS
    _expect(tokens, i, vocab.special("</img>"), vocab)
    _expect(tokens, i + 1, vocab.special("<state>"), vocab)
    i += 2
    sv = [_field(tokens, i + k, n, vocab) for k, n in enumerate(STATE_FIELDS)]
    i += len(STATE_FIELDS)
    _expect(tokens, i, vocab.special("</state>"), vocab)
    _expect(tokens, i + 1, vocab.special("<action>"), vocab)
    i += 2
    av = [_field(tokens, i + k, n, vocab) for k, n in enumerate(ACTION_FIELDS)]
    i += len(ACTION_FIELDS)
    _expect(tokens, i, vocab.special("</action>"), vocab)
    off = img.offset
    sample = Sample(tuple(body) if off == 0 else tuple([t - off for t in body]),
                    State(sv[0], sv[1], int(sv[2]), int(sv[3])),
                    Action(av[0], av[1], int(av[2]), int(av[3])))
    return sample, i + 1


def encode_sentence(samples: Iterable[Sample], vocab: TokenVocab = DEFAULT_VOCAB) -> List[int]:
    out = [vocab.special("<bos>")]
    for s in samples:
        out.extend(encode_sample(s, vocab))
    out.append(vocab.special("<eos>"))
    return out


def decode_sentence(tokens: Sequence[int], vocab: TokenVocab = DEFAULT_VOCAB) -> List[Sample]:
    if not tokens or tokens[0] != vocab.special("<bos>"):
        raise TokenDecodeError("sentence must start with <bos>")
    if tokens[-1] != vocab.special("<eos>"):
        raise TokenDecodeError("sentence must end with <eos>")
    out = []
    i, end = 1, len(tokens) - 1
    body = tokens[:end]
    while i < end:
        s, i = decode_sample(body, vocab, i)
        out.append(s)
    return out


# -- JSONL -------------------------------------------------------------------

class JsonlError(VocabError):
    pass


def emit_jsonl(sentences: Iterable[Sequence[int]], sink: Union[str, Path, IO[str]],
               vocab: TokenVocab = DEFAULT_VOCAB) -> int:
    """Write one JSON integer array per line; returns the number of lines."""
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8", newline="\n") as fh:
            return emit_jsonl(sentences, fh, vocab)
    bos, eos = vocab.special("<bos>"), vocab.special("<eos>")
    n = 0
    for k, toks in enumerate(sentences):
        toks = [int(t) for t in toks]
        if len(toks) < 2 or toks[0] != bos or toks[-1] != eos:
            raise JsonlError(f"sentence {k} is not delimited by <bos> ... <eos>")
        bad = [t for t in toks if not 0 <= t < vocab.size]
        if bad:
            raise JsonlError(f"sentence {k}: out-of-vocabulary id {bad[0]}")
        sink.write(json.dumps(toks, separators=(",", ":")))
        sink.write("\n")
        n += 1
    return n


def iter_jsonl(source: Union[str, Path, IO[str]],
               vocab: TokenVocab = DEFAULT_VOCAB) -> Iterator[List[int]]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            yield from iter_jsonl(fh, vocab)
        return
    bos, eos = vocab.special("<bos>"), vocab.special("<eos>")
    for lineno, line in enumerate(source, 1):
        if not line.strip():
            continue
        try:
            toks = json.loads(line)
        except json.JSONDecodeError as exc:
            raise JsonlError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
        if not isinstance(toks, list) or not all(isinstance(t, int) and not isinstance(t, bool)
                                                 for t in toks):
            raise JsonlError(f"line {lineno}: expected an array of integers")
        for t in toks:
            if not 0 <= t < vocab.size:
                raise JsonlError(f"line {lineno}: out-of-vocabulary id {t}")
        if len(toks) < 2 or toks[0] != bos or toks[-1] != eos:
            raise JsonlError(f"line {lineno}: missing <bos>/<eos> delimiters")
        yield toks


def read_jsonl(source: Union[str, Path, IO[str]],
               vocab: TokenVocab = DEFAULT_VOCAB) -> List[List[int]]:
    return list(iter_jsonl(source, vocab))


# -- image tokenizers -----------------------------------------------------

class ImageTokenizer(Protocol):
    def tokenize(self, image: np.ndarray) -> Tuple[int, ...]:
        ...


def _mix64(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


class StubImageTokenizer:
    """Deterministic stand-in for a VQ image tokenizer.

    The image is block-averaged to a 32x32 luminance grid; each cell's 8-bit
    mean is hashed together with the cell index into [0, 8192). Shape-correct,
    not invertible.
    """

    grid = 32

    def tokenize(self, image: np.ndarray) -> Tuple[int, ...]:
        arr = np.asarray(image, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[..., :3] @ np.array([0.299, 0.587, 0.114]) if arr.shape[2] >= 3 else arr[..., 0]
        h, w = arr.shape
        g = self.grid
        if h < g or w < g:
            raise ValueError(f"image {w}x{h} smaller than the {g}x{g} token grid")
        ys = np.linspace(0, h, g + 1).astype(int)
        xs = np.linspace(0, w, g + 1).astype(int)
        means = np.add.reduceat(np.add.reduceat(arr, ys[:-1], axis=0), xs[:-1], axis=1)
        counts = np.outer(np.diff(ys), np.diff(xs))
        levels = np.clip(np.rint(means / counts), 0, 255).astype(np.uint64).ravel()
        cells = np.arange(g * g, dtype=np.uint64)
        with np.errstate(over="ignore"):
            ids = _mix64(levels + (cells << np.uint64(8))) % np.uint64(IMAGE_VOCAB)
        return tuple(int(t) for t in ids)


class ConstantImageTokenizer:
    """Emits a fixed token for every position; for structure-only dataset runs."""

    def __init__(self, token: int = 0):
        self.token = token

    def tokenize(self, image: np.ndarray) -> Tuple[int, ...]:
        return (self.token,) * IMAGE_TOKENS
