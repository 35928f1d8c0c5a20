"""Script para executar o pipeline completo para Kr, Xe e SF6 e imprimir a tabela de resultados."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

# Adds the repository root to the path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.errors import GasCollisionError  # noqa: E402
from src.pipeline import load_run_config, run_experiment  # noqa: E402

GASES = ("Kr", "Xe", "SF6")


def run_gas(gas: str, env: str, output_root: Path, seed: Optional[int] = None) -> dict:
    """Runs every stage for one gas."""
    print(f"\n{'=' * 60}")
    print(f"PIPELINE: {gas}")
    print(f"{'=' * 60}")

    try:
        overrides = {"gas": gas, "seed": seed, "output_dir": str(output_root / gas.lower())}
        config = load_run_config(env=env, overrides=overrides)
        report = run_experiment(config)
    except GasCollisionError as e:
        print(f"\n❌ Pipeline {gas} failed: {e}")
        return {"gas": gas, "status": "error", "error": str(e)}

    summary = report.summary
    result = {"gas": gas, "status": "success", "converged": report.converged, "run_id": report.run_id}
    if summary is not None:
        result.update({
            "alpha": (summary.alpha.median, summary.alpha.lo, summary.alpha.hi),
            "ts_ul_95": summary.ts_upper_limit,
        })
    if report.background is not None:
        result["pressure_floor"] = report.background.pressure_floor

    print(f"\n✅ Pipeline {gas} finished:")
    for row in report.pressure_table():
        print(f"   📈 {row['dataset_id']}: {row['pressure_med']:.2e} mbar (gauge {row['gauge_pressure']:.2e})")
    excluded = [d.dataset_id for d in report.datasets if d.excluded]
    if excluded:
        print(f"   ⚠️  Excluded from the fit: {', '.join(excluded)}")
    return result


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--env", default="desk", help="Environment in config/experiment.yml")
    parser.add_argument("--out", type=Path, default=Path("output/all_gases"), help="Output root")
    parser.add_argument("--seed", type=int, default=None, help="Override the run seed")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    print("=" * 60)
    print("COMPLETE PIPELINE - ALL GASES")
    print("=" * 60)

    results = [run_gas(gas, args.env, args.out.resolve(), args.seed) for gas in GASES]

    print("\n" + "=" * 60)
    print("FINAL SUMMARY")
    print("=" * 60)
    print(f"\n{'gas':<6}{'alpha':>22}{'T_s 95% UL':>14}{'P floor':>12}")
    for result in results:
        if result["status"] != "success":
            print(f"❌ {result['gas']}: {result.get('error', 'unknown')}")
            continue
        if "alpha" not in result:
            print(f"⚠️  {result['gas']}: no dataset was fitted")
            continue
        med, lo, hi = result["alpha"]
        alpha = f"{med:.2f} (+{hi - med:.2f}/-{med - lo:.2f})"
        ts = f"< {result['ts_ul_95']:.0f} K" if result["ts_ul_95"] is not None else "-"
        floor = f"{result['pressure_floor']:.1e}" if result.get("pressure_floor") else "-"
        flag = "" if result["converged"] else "  ⚠️  not converged"
        print(f"{result['gas']:<6}{alpha:>22}{ts:>14}{floor:>12}{flag}")

    print("\n" + "=" * 60)
    print("✅ COMPLETE PIPELINE FINISHED")
    print("=" * 60)
    return 0 if all(r["status"] == "success" for r in results) else 3


if __name__ == "__main__":
    sys.exit(main())
