from __future__ import annotations

import argparse
from pathlib import Path
from typing import Sequence

import pandas as pd
from pyspgls import build_scls, krylov_solve, recover_spg
from pyspgls.data import load_csv, preset_rule, train_test_split
from pyspgls.reformulate import manipulated_predictions


def evaluate(
    path: Path,
    preset: str,
    variant: int = 0,
    gammas: Sequence[float] = (0.01, 0.1, 1.0),
    label_col: str = "-1",
    categorical: Sequence[str] = (),
    seed: int = 0,
) -> pd.DataFrame:
    """Test MSE of the learner on manipulated data, one row per gamma."""
    column = int(label_col) if label_col.lstrip("-").isdigit() else label_col
    samples = load_csv(
        path,
        column,
        rule=preset_rule(preset, variant),
        categorical=categorical,
    )
    train, test = train_test_split(samples, 0.2, seed=seed)

    records = []
    for gamma in gammas:
        game = train.with_gamma(gamma)
        r, report = krylov_solve(build_scls(game))
        pt = recover_spg(game, r)
        held_out = test.with_gamma(gamma)
        residual = manipulated_predictions(held_out, pt) - held_out.y
        records.append(
            dict(
                gamma=gamma,
                train_mse=report.objective / game.m,
                test_mse=float(residual @ residual) / held_out.m,
                matvecs=report.matvecs,
                wall_time=report.wall_time,
            )
        )
    return pd.DataFrame.from_records(records)


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("path", type=Path)
    parser.add_argument("preset")
    parser.add_argument("--variant", type=int, default=0)
    parser.add_argument("--label-col", default="-1")
    parser.add_argument("--categorical", nargs="*", default=[])
    args = parser.parse_args()
    frame = evaluate(
        args.path,
        args.preset,
        args.variant,
        label_col=args.label_col,
        categorical=args.categorical,
    )
    print(frame.to_string(index=False))
