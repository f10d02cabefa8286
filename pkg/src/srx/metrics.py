"""Text-to-video retrieval metrics: recall at K and median rank."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, ValidationError

DEFAULT_KS = (1, 5, 10)


@dataclass(frozen=True)
class RetrievalReport:
    r_at: dict  # K -> fraction of queries whose true clip ranks <= K
    med_r: float
    n_queries: int
    n_candidates: int

    def as_dict(self) -> dict:
        out = {"n_queries": self.n_queries, "n_candidates": self.n_candidates}
        out.update({f"r@{k}": v for k, v in sorted(self.r_at.items())})
        out["med_r"] = self.med_r
        return out


def ranks(scores, ground_truth, clip_ids=None) -> np.ndarray:
    """1-based rank of each query's true clip under descending score.

    Ties are pessimistic: the true clip is placed after every candidate with
    an equal score. ``ground_truth`` holds column indices, or ids looked up
    in ``clip_ids`` when that is given.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ContractError(f"score matrix must be 2-D, got shape {scores.shape}")
    if clip_ids is not None:
        column = {cid: j for j, cid in enumerate(clip_ids)}
        missing = [g for g in ground_truth if g not in column]
        if missing:
            raise ValidationError(f"ground-truth clip ids not among candidates: {missing[:5]}")
        ground_truth = [column[g] for g in ground_truth]
    gt = np.asarray(ground_truth, dtype=int)
    if gt.shape != (scores.shape[0],):
        raise ValidationError(f"need one ground-truth clip per query ({scores.shape[0]}), got {gt.shape}")
    if np.any((gt < 0) | (gt >= scores.shape[1])):
        raise ValidationError("ground-truth column index out of range")
    true_scores = scores[np.arange(len(gt)), gt]
    return (scores >= true_scores[:, None]).sum(axis=1)


def report(rank_list, ks=DEFAULT_KS, n_candidates: int | None = None) -> RetrievalReport:
    r = np.asarray(rank_list)
    if r.size == 0:
        raise ContractError("cannot summarise an empty rank list")
    return RetrievalReport(
        r_at={int(k): float(np.mean(r <= k)) for k in ks},
        med_r=float(np.median(r)),
        n_queries=int(r.size),
        n_candidates=int(n_candidates if n_candidates is not None else r.max()),
    )


def evaluate(scores, ground_truth, clip_ids=None, ks=DEFAULT_KS) -> RetrievalReport:
    scores = np.asarray(scores)
    return report(ranks(scores, ground_truth, clip_ids), ks, n_candidates=scores.shape[1])


def random_baseline(n_candidates: int, seed: int, n_queries: int | None = None, ks=DEFAULT_KS) -> RetrievalReport:
    """Report for i.i.d. uniform scores (true clip on the diagonal)."""
    n_queries = n_candidates if n_queries is None else n_queries
    rng = np.random.default_rng(seed)
    scores = rng.uniform(size=(n_queries, n_candidates))
    return evaluate(scores, np.arange(n_queries) % n_candidates, ks=ks)


# -- report files ----------------------------------------------------------

def format_kv(rep: RetrievalReport) -> str:
    return "".join(f"{k}={v!r}\n" for k, v in rep.as_dict().items())


def parse_kv(text: str) -> RetrievalReport:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"report line {lineno} is not key=value: {line!r}")
        values[key.strip()] = value.strip()
    try:
        r_at = {int(k[2:]): float(v) for k, v in values.items() if k.startswith("r@")}
        return RetrievalReport(
            r_at=r_at,
            med_r=float(values["med_r"]),
            n_queries=int(values["n_queries"]),
            n_candidates=int(values["n_candidates"]),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed key-value report: {exc}") from None


def format_text(rep: RetrievalReport) -> str:
    lines = [
        "text-to-video retrieval",
        f"queries     {rep.n_queries}",
        f"candidates  {rep.n_candidates}",
        "metric  value  (percent)",
    ]
    for k, v in sorted(rep.r_at.items()):
        lines.append(f"R@{k:<5} {v!r}  ({100 * v:.2f}%)")
    lines.append(f"MedR    {rep.med_r!r}")
    return "\n".join(lines) + "\n"


def parse_text(text: str) -> RetrievalReport:
    lines = text.splitlines()
    try:
        n_queries = int(lines[1].split()[1])
        n_candidates = int(lines[2].split()[1])
        r_at = {}
        med_r = None
        for line in lines[4:]:
            parts = line.split()
            if not parts:
                continue
            if parts[0].startswith("R@"):
                r_at[int(parts[0][2:])] = float(parts[1])
            elif parts[0] == "MedR":
                med_r = float(parts[1])
        if med_r is None:
            raise ValueError("no MedR line")
    except (IndexError, ValueError) as exc:
        raise FormatError(f"malformed text report: {exc}") from None
    return RetrievalReport(r_at, med_r, n_queries, n_candidates)


def write_reports(rep: RetrievalReport, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    txt, kv = out_dir / "report.txt", out_dir / "report.kv"
    txt.write_text(format_text(rep))
    kv.write_text(format_kv(rep))
    return txt, kv


def read_report(path) -> RetrievalReport:
    path = Path(path)
    text = path.read_text()
    return parse_kv(text) if path.suffix == ".kv" else parse_text(text)
