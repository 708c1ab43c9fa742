"""Tracking-error metrics over flight logs and controller comparison reports."""

import numpy as np

from .controller import ControllerGains, desired_attitude_arrays, position_control_arrays
from .rotations import quat_to_rotmat, rotation_angle
from .scenarios import run_scenario

COMPARE_SCENARIOS = ("hover_prox", "circle_same", "circle_reversed")


def e_pos(log):
    """Root-mean-square position tracking error in metres."""
    if len(log) == 0:
        raise ValueError("empty flight log")
    err = log.block("des_px", "des_py", "des_pz") - log.block("px", "py", "pz")
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


def e_att(log, gains=None):
    """Root-mean-square attitude tracking error in radians.

    Each sample is the minimum rotational angle between the flown attitude
    and the attitude setpoint the cascade derives from the logged estimate
    and reference (thrust-vector tilt composed with the desired yaw).
    Rebuilding the setpoint from the log keeps the metric comparable across
    controller variants: a manoeuvre that requires tilt does not count the
    required tilt as error.  Assumes the standard gains unless overridden.
    """
    if len(log) == 0:
        raise ValueError("empty flight log")
    if gains is None:
        gains = ControllerGains()
    accel = position_control_arrays(
        log.block("est_px", "est_py", "est_pz"),
        log.block("est_vx", "est_vy", "est_vz"),
        log.block("des_px", "des_py", "des_pz"),
        log.block("des_vx", "des_vy", "des_vz"),
        gains,
    )
    q_des = desired_attitude_arrays(accel, log.column("des_yaw"))
    rot = quat_to_rotmat(log.block("qw", "qx", "qy", "qz"))
    angle = rotation_angle(rot, quat_to_rotmat(q_des))
    return float(np.sqrt(np.mean(angle**2)))


def summarize(log):
    return {"E_pos": e_pos(log), "E_att": e_att(log)}


def compare_controllers(variants, scenarios=COMPARE_SCENARIOS, seeds=(0,), vehicle="LQ"):
    """Run each controller variant over the scenario/seed grid and tabulate.

    variants maps a variant name to the policy parameters flown on the
    measured vehicle (None means basic-only).  Failed runs are counted and
    excluded from that cell's averages.  Returns a report dict consumed by
    report_csv / report_text.
    """
    if len(variants) < 2:
        raise ValueError("need at least two variants to compare")
    cells = {}
    for task in scenarios:
        for name, policy in variants.items():
            pos_vals, att_vals, failures = [], [], 0
            for seed in seeds:
                controllers = {vehicle: policy} if policy is not None else None
                result = run_scenario(task, controllers=controllers, seed=seed)
                if result.failed:
                    failures += 1
                    continue
                log = result.logs[vehicle]
                pos_vals.append(e_pos(log))
                att_vals.append(e_att(log))
            cells[(task, name)] = {
                "e_pos": float(np.mean(pos_vals)) if pos_vals else float("nan"),
                "e_att": float(np.mean(att_vals)) if att_vals else float("nan"),
                "failures": failures,
                "runs": len(seeds),
            }
    report = {
        "tasks": tuple(scenarios),
        "variants": tuple(variants),
        "cells": cells,
    }
    for name in variants:
        rows = [cells[(task, name)] for task in scenarios]
        clean = [r for r in rows if r["failures"] < r["runs"]]
        report.setdefault("averages", {})[name] = {
            "e_pos": float(np.mean([r["e_pos"] for r in clean])) if clean else float("nan"),
            "e_att": float(np.mean([r["e_att"] for r in clean])) if clean else float("nan"),
            "failures": int(sum(r["failures"] for r in rows)),
        }
    return report


def report_csv(report):
    lines = ["task,variant,e_pos,e_att,failures,runs"]
    for task in report["tasks"]:
        for name in report["variants"]:
            cell = report["cells"][(task, name)]
            lines.append(
                f"{task},{name},{cell['e_pos']:.17g},{cell['e_att']:.17g},"
                f"{cell['failures']},{cell['runs']}"
            )
    for name in report["variants"]:
        avg = report["averages"][name]
        lines.append(
            f"average,{name},{avg['e_pos']:.17g},{avg['e_att']:.17g},"
            f"{avg['failures']},"
        )
    return "\n".join(lines) + "\n"


def report_text(report):
    """Aligned text table, one row per task per variant plus averages."""
    header = ["task", "variant", "E_pos [m]", "E_att [rad]", "failed"]
    rows = []
    for task in report["tasks"]:
        for name in report["variants"]:
            cell = report["cells"][(task, name)]
            flag = f"{cell['failures']}/{cell['runs']}" if cell["failures"] else ""
            rows.append([task, name, f"{cell['e_pos']:.4f}", f"{cell['e_att']:.4f}", flag])
    for name in report["variants"]:
        avg = report["averages"][name]
        rows.append(
            ["average", name, f"{avg['e_pos']:.4f}", f"{avg['e_att']:.4f}", ""]
        )
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    out = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(header))]
    out.append("  ".join("-" * w for w in widths))
    for row in rows:
        out.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(row)))
    return "\n".join(out) + "\n"
