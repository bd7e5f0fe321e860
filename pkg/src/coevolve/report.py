"""Aggregate finished runs into tables (JSON + CSV) and SVG charts."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import plotting
from .coevolution import CoEvolutionState, RunMode, Schedule
from .metrics import DegenerateBaseline, compute_hns, compute_tts, summarize
from .runstore import IncompleteRun, load_run, sanitize

TABLE_COLUMNS = ("env", "mode", "n_runs", "mts_mean", "mts_std", "v_best_mean", "v_best_std", "hns",
                 "tts_epochs", "tts_closed_form", "tts_ratio", "note")
CURVE_COLUMNS = ("env", "mode", "seed", "round", "v_best", "mts_best", "epochs_total")


def _finite(x) -> Optional[float]:
    return x if isinstance(x, (int, float)) and math.isfinite(x) else None


def summary_from_events(events: Sequence[dict]) -> dict:
    """Per-run summary rebuilt from the event log alone."""
    start = next((e for e in events if e.get("event") == "run_start"), None)
    end = events[-1] if events and events[-1].get("event") == "run_end" else None
    if start is None or end is None:
        raise IncompleteRun("event log lacks run_start/run_end")
    rounds = [{"round": e["round"], "accepted": e["accepted"], "batches": e["batches"],
               "v_best": _finite(e["v_best"]), "mts_best": _finite(e["mts_best"]),
               "epochs_total": e["epochs_total"]}
              for e in events if e.get("event") == "round_end"]
    return {"env": start["env"], "mode": start["mode"], "seed": start["seed"],
            "v_best": _finite(end["v_best"]), "mts_best": _finite(end["mts_best"]),
            "epochs_total": end["epochs_total"], "ledger": dict(end["ledger"]), "rounds": rounds,
            "schedule": start["schedule"]}


def summary_from_state(state: CoEvolutionState, env: str, mode: RunMode, seed: int, schedule: Schedule) -> dict:
    """The same summary computed from the in-memory state of a live run."""
    rounds = [{"round": h["round"], "accepted": h["accepted"], "batches": h["batches"],
               "v_best": _finite(h["v_best"]), "mts_best": _finite(h["mts_best"]),
               "epochs_total": h["epochs_total"]} for h in state.history]
    return {"env": env, "mode": mode.label, "seed": seed, "v_best": _finite(state.v_best),
            "mts_best": _finite(state.mts_best), "epochs_total": state.total_epochs,
            "ledger": dict(sorted(state.ledger.items())), "rounds": rounds, "schedule": schedule.to_dict()}


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    runs: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return sanitize({"rows": self.rows, "runs": self.runs, "notes": self.notes})

    def table_csv(self) -> str:
        return _csv(TABLE_COLUMNS, self.rows)

    def curves_csv(self) -> str:
        rows = [{"env": r["env"], "mode": r["mode"], "seed": r["seed"], **rd}
                for r in self.runs for rd in r["rounds"]]
        return _csv(CURVE_COLUMNS, rows)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def parse_table_csv(text: str) -> list:
    ints = {"n_runs", "tts_closed_form"}
    floats = {"mts_mean", "mts_std", "v_best_mean", "v_best_std", "hns", "tts_epochs", "tts_ratio"}
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        rec = {}
        for k, v in row.items():
            if v == "":
                rec[k] = None if k != "note" else ""
            elif k in ints:
                rec[k] = int(v)
            elif k in floats:
                rec[k] = float(v)
            else:
                rec[k] = v
        out.append(rec)
    return out


def build_report(summaries: Sequence[dict], baselines: Optional[dict] = None) -> MetricReport:
    """Group runs by (env, mode); ``baselines`` maps env -> {"sparse": x, "human": y} for HNS."""
    if not summaries:
        raise IncompleteRun("no completed runs to report")
    groups: dict = {}
    for s in summaries:
        groups.setdefault((s["env"], s["mode"]), []).append(s)
    rep = MetricReport(runs=sorted(summaries, key=lambda s: (s["env"], s["mode"], s["seed"])))
    for (env, mode), runs in sorted(groups.items()):
        m = summarize([r["mts_best"] for r in runs])
        v = summarize([r["v_best"] for r in runs])
        notes = [n for n in (m["note"],) if n]
        hns = None
        base = (baselines or {}).get(env)
        if base is not None and m["mean"] is not None:
            try:
                hns = compute_hns(m["mean"], float(base["sparse"]), float(base["human"]))
            except DegenerateBaseline as exc:
                notes.append(str(exc))
        tts = compute_tts(Schedule.from_dict(runs[0]["schedule"]), RunMode.parse(mode))
        if tts.discrepancy:
            notes.append(tts.discrepancy)
            rep.notes.append(f"{env}/{mode}: {tts.discrepancy}")
        rep.rows.append({
            "env": env, "mode": mode, "n_runs": len(runs), "mts_mean": m["mean"], "mts_std": m["std"],
            "v_best_mean": v["mean"], "v_best_std": v["std"], "hns": hns,
            "tts_epochs": sum(r["epochs_total"] for r in runs) / len(runs),
            "tts_closed_form": tts.total_epochs, "tts_ratio": tts.ratio_vs_eureka, "note": "; ".join(notes),
        })
    return rep


def write_report(rep: MetricReport, out) -> dict:
    out = Path(out)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / "report.json",
        "csv": out / "report.csv",
        "curves": out / "curves.csv",
    }
    paths["json"].write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["csv"].write_text(rep.table_csv(), encoding="utf-8")
    paths["curves"].write_text(rep.curves_csv(), encoding="utf-8")
    for env in sorted({r["env"] for r in rep.runs}):
        for key, ylabel in (("mts_best", "max training success"), ("v_best", "evaluated return of incumbent")):
            series: dict = {}
            for r in rep.runs:
                if r["env"] != env:
                    continue
                label = f"{r['mode']} seed {r['seed']}"
                series[label] = [(rd["round"], rd[key]) for rd in r["rounds"]]
            paths[f"{key}:{env}"] = plotting.line_chart(
                series, out / "plots" / f"{key}-{env}.svg", f"{env}: {key} per round", "round", ylabel)
    hns_rows = [r for r in rep.rows if r["hns"] is not None]
    if hns_rows:
        paths["hns"] = plotting.bar_chart([f"{r['env']}/{r['mode']}" for r in hns_rows],
                                          [r["hns"] for r in hns_rows], out / "plots" / "hns.svg",
                                          "human normalized score", "HNS")
    return paths


def report(run_dirs: Sequence, out, baselines: Optional[dict] = None) -> MetricReport:
    summaries = [summary_from_events(load_run(d).events) for d in run_dirs]
    rep = build_report(summaries, baselines)
    write_report(rep, out)
    return rep
