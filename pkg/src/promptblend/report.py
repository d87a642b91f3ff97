"""Report rendering: weight tables, loss curves, orthogonality summaries.

Rendering is a pure function of the run record (and basis), so the same
record always produces byte-identical files. Numbers are read from the
record; nothing is recomputed. Weights print with exactly 4 decimals,
per-example rows are ordered hardest (highest loss) first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .composer import PromptBasis, orthogonality_score, top_contributors
from .train import RunRecord, stability_metric

_ROMAN = ["I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X"]


@dataclass
class ReportBundle:
    metadata: dict
    summary: dict
    rows: list[dict]
    ortho: dict
    projection: list[list] | None
    text: str
    json_text: str


def _fmt_w(value: float) -> str:
    return f"{value:.4f}"


def _ortho_section(basis: PromptBasis) -> dict:
    k = basis.size
    gram_rendered = [[_fmt_w(basis.gram[i, j]) for j in range(k)] for i in range(k)]
    section = {
        "score": orthogonality_score(basis),
        "gram": gram_rendered,
        "prompts": list(basis.prompts),
    }
    if k > 1:
        off = np.abs(basis.gram - np.eye(k))
        i, j = np.unravel_index(int(np.argmax(off)), off.shape)
        i, j = (int(min(i, j)), int(max(i, j)))
        section["most_parallel_pair"] = {
            "indices": [i, j],
            "similarity": float(basis.gram[i, j]),
        }
    return section


def _ortho_text_lines(section: dict) -> list[str]:
    lines = ["basis orthogonality", "-------------------"]
    lines.append(f"score: {_fmt_w(section['score'])}")
    pair = section.get("most_parallel_pair")
    if pair is not None:
        i, j = pair["indices"]
        lines.append(f"most parallel pair: prompts {i + 1} and {j + 1} "
                     f"(similarity {_fmt_w(pair['similarity'])})")
    lines.append("gram matrix:")
    for row in section["gram"]:
        lines.append("  " + " ".join(f"{v:>8s}" for v in row))
    return lines


def render_report(record: RunRecord, basis: PromptBasis, n_top: int = 3) -> ReportBundle:
    """Build the human table and the structured file for one run."""
    if n_top > basis.size:
        raise ValueError(f"n_top {n_top} exceeds basis size {basis.size}")
    if list(record.basis_prompts) != list(basis.prompts):
        raise ValueError("basis does not match the prompts recorded for this run")
    metadata = {
        "config": dict(record.config),
        "basis_size": basis.size,
        "prompt_length": basis.length,
        "lm_param_hash": record.lm_param_hash,
    }
    control = record.control_eval_loss
    prompted = record.prompted_eval_loss
    summary = {
        "control_eval_loss": control,
        "prompted_eval_loss": prompted,
        "relative_reduction": (control - prompted) / control if control else 0.0,
    }
    ordered = sorted(record.examples, key=lambda e: -e.loss)
    rows = []
    for ex in ordered:
        contributors = top_contributors(np.asarray(ex.weights), basis, n_top)
        rows.append({
            "id": ex.id,
            "loss": ex.loss,
            "question": ex.question,
            "contributors": [
                {"prompt": p, "weight": w, "rendered": _fmt_w(w)}
                for p, w in contributors
            ],
        })
    ortho = _ortho_section(basis)

    lines = ["promptblend run report", "======================", ""]
    cfg = record.config
    lines.append(f"epochs={cfg['epochs']} batch_size={cfg['batch_size']} "
                 f"lr={cfg['lr']} dropout={cfg['dropout_p']} "
                 f"weight_decay={cfg['weight_decay']} seed={cfg['seed']}")
    lines.append(f"basis: {basis.size} prompts, padded length {basis.length}")
    lines.append(f"frozen lm hash: {record.lm_param_hash}")
    lines.append("")
    lines.append("summary")
    lines.append("-------")
    lines.append(f"control eval loss:  {control:.4f}")
    lines.append(f"prompted eval loss: {prompted:.4f}")
    lines.append(f"relative reduction: {summary['relative_reduction'] * 100:.2f}%")
    lines.append("")
    lines.append(f"eval examples, hardest first (top {n_top} contributing prompts)")
    lines.append("-" * 64)
    for row in rows:
        contribs = " ".join(
            f"{_ROMAN[i]}. {c['prompt']} ({c['rendered']})"
            for i, c in enumerate(row["contributors"])
        )
        lines.append(f"{row['loss']:.2f}  {row['question']}")
        lines.append(f"      {contribs}")
    lines.append("")
    lines.extend(_ortho_text_lines(ortho))
    if record.projection:
        lines.append("")
        lines.append("prompt projection to vocabulary (mean eval weights)")
        lines.append("---------------------------------------------------")
        for tok, cos in record.projection:
            lines.append(f"  {tok:<20s} cosine {_fmt_w(cos)}")
    text = "\n".join(lines) + "\n"

    payload = {
        "metadata": metadata,
        "summary": summary,
        "examples": rows,
        "orthogonality": ortho,
        "projection": record.projection,
    }
    json_text = json.dumps(payload, indent=2, ensure_ascii=False) + "\n"
    return ReportBundle(metadata=metadata, summary=summary, rows=rows, ortho=ortho,
                        projection=record.projection, text=text, json_text=json_text)


def render_curve_csv(record: RunRecord) -> str:
    """Loss-curve CSV; float text round-trips to the exact recorded value."""
    lines = ["epoch,step,batch_size,loss"]
    for s in record.steps:
        lines.append(f"{s.epoch},{s.step},{s.batch_size},{s.loss!r}")
    return "\n".join(lines) + "\n"


def render_curves(records: list[RunRecord]) -> tuple[list[str], str]:
    """One CSV per record plus a volatility comparison summary."""
    if not records:
        raise ValueError("need at least one record")
    epoch_counts = {len(r.epoch_means) for r in records}
    if len(epoch_counts) != 1:
        raise ValueError(f"records disagree on epoch count: {sorted(epoch_counts)}")
    csvs = [render_curve_csv(r) for r in records]
    lines = ["loss-curve comparison", "---------------------"]
    metrics = []
    for r in records:
        m = stability_metric(r)
        metrics.append(m)
        lines.append(f"batch_size={r.config['batch_size']} epochs={len(r.epoch_means)} "
                     f"stability={m!r}")
    if len(records) == 2 and metrics[0] != metrics[1]:
        if min(metrics) > 0:
            lines.append(f"volatility ratio: {max(metrics) / min(metrics):.3f}")
        noisier = records[int(np.argmax(metrics))]
        lines.append(f"higher volatility: batch_size={noisier.config['batch_size']}")
    return csvs, "\n".join(lines) + "\n"


def render_ortho(basis: PromptBasis) -> tuple[str, dict]:
    """Standalone orthogonality report for a basis."""
    section = _ortho_section(basis)
    lines = _ortho_text_lines(section)
    lines.append("")
    lines.append("prompts:")
    for i, p in enumerate(basis.prompts, start=1):
        lines.append(f"  {i}. {p}")
    return "\n".join(lines) + "\n", section
