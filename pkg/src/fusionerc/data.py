"""Dialog corpora: JSON-lines IO, validation, featurization and synthetic generation.

File layout: an optional first line ``{"header": {"n_classes": C, "dims": [D_T, D_A, D_V]}}``
followed by one dialog per line::

    {"dialog_id": "d0", "utterances": [
        {"text_embedding": [...], "audio": [...] | "clips/u0.wav",
         "frames": [...] | {"frames": [...]}, "label": 3}, ...]}

WAV paths resolve relative to the corpus file. ``frames`` may hold either a
precomputed visual vector or a raw per-frame payload.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .audio import N_MELS, fit_frames, mel_spectrogram, read_wav
from .visual import UtteranceFrames, visual_utterance_embedding


class CorpusError(ValueError):
    pass


@dataclass
class CorpusRecord:
    """One dialog of ``k`` utterances with per-modality feature matrices."""

    dialog_id: str
    text: np.ndarray    # (k, D_T)
    audio: np.ndarray   # (k, D_A)
    visual: np.ndarray  # (k, D_V)
    labels: np.ndarray  # (k,)

    @property
    def k(self) -> int:
        return len(self.labels)

    def features(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.text, self.audio, self.visual


@dataclass
class Corpus:
    records: List[CorpusRecord] = field(default_factory=list)
    n_classes: Optional[int] = None
    dims: Optional[Tuple[int, int, int]] = None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[CorpusRecord]:
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def subset(self, indices: Sequence[int]) -> "Corpus":
        return Corpus([self.records[i] for i in indices], self.n_classes, self.dims)

    @property
    def n_utterances(self) -> int:
        return sum(r.k for r in self.records)

    def all_labels(self) -> np.ndarray:
        if not self.records:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([r.labels for r in self.records])


# -- featurization -----------------------------------------------------
AudioFeaturizer = Callable[[Path], np.ndarray]


def extractor_audio_featurizer(extractor) -> AudioFeaturizer:
    """Map a WAV path to a representation via mel spectrogram and a trained extractor.

    The spectrogram is cropped or zero-padded along time to the extractor's
    input height; its mel axis must match the input width.
    """
    h, w, c = extractor.cfg.input_shape
    if c != 1 or w != N_MELS:
        raise CorpusError(f"audio extractor must take (frames, {N_MELS}, 1) inputs, got {extractor.cfg.input_shape}")

    def featurize(path: Path) -> np.ndarray:
        spec = mel_spectrogram(read_wav(path)).values
        patch = np.log1p(fit_frames(spec, h))[:, :, None]
        return extractor.represent(patch)

    return featurize


def _vector(value, what: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise CorpusError(f"{what} must be a non-empty list of numbers")
    if not np.all(np.isfinite(arr)):
        raise CorpusError(f"{what} contains non-finite values")
    return arr


def _parse_record(obj: dict, base: Path, audio_featurizer: Optional[AudioFeaturizer]) -> CorpusRecord:
    if not isinstance(obj, dict) or "dialog_id" not in obj or "utterances" not in obj:
        raise CorpusError("record needs 'dialog_id' and 'utterances'")
    did = str(obj["dialog_id"])
    utts = obj["utterances"]
    if not isinstance(utts, list) or not utts:
        raise CorpusError(f"dialog {did}: 'utterances' must be a non-empty list")
    text, audio, visual, labels = [], [], [], []
    for j, u in enumerate(utts):
        where = f"dialog {did} utterance {j}"
        try:
            text.append(_vector(u["text_embedding"], f"{where} text_embedding"))
            a = u["audio"]
            if isinstance(a, str):
                wav = (base / a).resolve()
                if not wav.is_file():
                    raise CorpusError(f"{where}: audio file {a} not found")
                if audio_featurizer is None:
                    raise CorpusError(f"{where}: audio given as WAV path but no audio extractor was supplied")
                audio.append(_vector(audio_featurizer(wav), f"{where} audio"))
            else:
                audio.append(_vector(a, f"{where} audio"))
            f = u["frames"]
            if isinstance(f, dict):
                visual.append(visual_utterance_embedding(UtteranceFrames.from_dict(f)))
            else:
                visual.append(_vector(f, f"{where} frames"))
            label = u["label"]
        except KeyError as exc:
            raise CorpusError(f"{where}: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, CorpusError):
                raise
            raise CorpusError(f"{where}: {exc}") from None
        if isinstance(label, bool) or not isinstance(label, int) or label < 0:
            raise CorpusError(f"{where}: label must be a non-negative integer, got {label!r}")
        labels.append(label)
    mats = []
    for name, rows in (("text_embedding", text), ("audio", audio), ("frames", visual)):
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise CorpusError(f"dialog {did}: {name} dimensions differ across utterances: {sorted(widths)}")
        mats.append(np.vstack(rows))
    return CorpusRecord(did, mats[0], mats[1], mats[2], np.asarray(labels, dtype=np.int64))


def validate_corpus(corpus: Corpus) -> None:
    """Enforce shared dimensions and label range; fill ``dims``/``n_classes`` when unset."""
    seen = set()
    for rec in corpus.records:
        if rec.dialog_id in seen:
            raise CorpusError(f"dialog {rec.dialog_id}: duplicate dialog_id")
        seen.add(rec.dialog_id)
        dims = (rec.text.shape[1], rec.audio.shape[1], rec.visual.shape[1])
        if corpus.dims is None:
            corpus.dims = dims
        elif dims != tuple(corpus.dims):
            raise CorpusError(f"dialog {rec.dialog_id}: dimensions {dims} differ from corpus dimensions "
                              f"{tuple(corpus.dims)}")
        if corpus.n_classes is not None and rec.labels.size and rec.labels.max() >= corpus.n_classes:
            raise CorpusError(f"dialog {rec.dialog_id}: label {int(rec.labels.max())} outside "
                              f"[0, {corpus.n_classes})")
    if corpus.n_classes is None and corpus.records:
        corpus.n_classes = int(corpus.all_labels().max()) + 1


def load_corpus(path, n_classes: Optional[int] = None,
                audio_featurizer: Optional[AudioFeaturizer] = None) -> Corpus:
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"{path}: corpus file not found")
    corpus = Corpus(n_classes=n_classes)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if isinstance(obj, dict) and "header" in obj:
                if lineno != 1 or corpus.records:
                    raise CorpusError(f"{path}:{lineno}: header must be the first line")
                header = obj["header"]
                if corpus.n_classes is None and header.get("n_classes") is not None:
                    corpus.n_classes = int(header["n_classes"])
                if header.get("dims") is not None:
                    corpus.dims = tuple(int(d) for d in header["dims"])
                continue
            try:
                corpus.records.append(_parse_record(obj, path.parent, audio_featurizer))
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
    validate_corpus(corpus)
    return corpus


def save_corpus(corpus: Corpus, path) -> None:
    """Write precomputed features; floats are serialized with round-trip precision."""
    with Path(path).open("w", encoding="utf-8") as fh:
        header = {"n_classes": corpus.n_classes, "dims": list(corpus.dims) if corpus.dims else None}
        fh.write(json.dumps({"header": header}) + "\n")
        for rec in corpus.records:
            utts = [{"text_embedding": rec.text[j].tolist(), "audio": rec.audio[j].tolist(),
                     "frames": rec.visual[j].tolist(), "label": int(rec.labels[j])} for j in range(rec.k)]
            fh.write(json.dumps({"dialog_id": rec.dialog_id, "utterances": utts}) + "\n")


# -- synthetic corpora -------------------------------------------------
def class_means(n_codes: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """``n_codes`` means whose pairwise distance is ``separation`` when ``dim >= n_codes``.

    Narrower spaces fall back to random unit directions scaled the same way.
    """
    if dim >= n_codes:
        q, _ = np.linalg.qr(rng.normal(size=(dim, n_codes)))
        dirs = q.T
    else:
        dirs = rng.normal(size=(n_codes, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * (separation / math.sqrt(2.0))


def generate_synthetic_corpus(n_dialogs: int, k: int, dims: Tuple[int, int, int], n_classes: int,
                              separation: float = 3.0, cross_modal_only: bool = False,
                              seed: int = 0) -> Corpus:
    """Gaussian class-conditional dialogs.

    With ``cross_modal_only`` each utterance draws a uniform text code ``i`` and
    sets the audio and visual code to ``(label - i) mod C``. Every modality on
    its own is then independent of the label; only the pairing of text with a
    key modality identifies it.
    """
    if min(n_dialogs, k, n_classes, *dims) < 1:
        raise ValueError("n_dialogs, k, n_classes and dims must all be positive")
    rng = np.random.default_rng(seed)
    means = [class_means(n_classes, d, separation, rng) for d in dims]
    records = []
    for n in range(n_dialogs):
        labels = rng.integers(0, n_classes, size=k)
        if cross_modal_only:
            t_code = rng.integers(0, n_classes, size=k)
            other = (labels - t_code) % n_classes
            codes = (t_code, other, other)
        else:
            codes = (labels, labels, labels)
        feats = [means[m][codes[m]] + rng.normal(size=(k, dims[m])) for m in range(3)]
        records.append(CorpusRecord(f"dialog-{n:05d}", feats[0], feats[1], feats[2], labels.astype(np.int64)))
    return Corpus(records, n_classes, tuple(dims))


def split_validation(corpus: Corpus, fraction: float = 0.1, seed: int = 0) -> Tuple[Corpus, Corpus]:
    """Seeded shuffle of dialogs; the first ``ceil(fraction * n)`` become validation.

    A single-dialog corpus has no validation part.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("validation fraction must lie in [0, 1)")
    order = np.random.default_rng(seed).permutation(len(corpus))
    n_val = min(math.ceil(fraction * len(corpus)), len(corpus) - 1) if len(corpus) > 1 else 0
    return corpus.subset(order[n_val:].tolist()), corpus.subset(sorted(order[:n_val].tolist()))


def dialog_batches(corpus: Corpus, batch_dialogs: int, rng: np.random.Generator) -> List[List[CorpusRecord]]:
    """Shuffle, then group whole dialogs of equal length into batches of at most ``batch_dialogs``."""
    if batch_dialogs < 1:
        raise ValueError("batch_dialogs must be >= 1")
    buckets: Dict[int, List[CorpusRecord]] = {}
    for i in rng.permutation(len(corpus)):
        rec = corpus.records[i]
        buckets.setdefault(rec.k, []).append(rec)
    batches = []
    for k in sorted(buckets):
        recs = buckets[k]
        batches.extend(recs[s:s + batch_dialogs] for s in range(0, len(recs), batch_dialogs))
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def stack_batch(batch: Sequence[CorpusRecord]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    return (np.stack([r.text for r in batch]), np.stack([r.audio for r in batch]),
            np.stack([r.visual for r in batch]), np.stack([r.labels for r in batch]))
