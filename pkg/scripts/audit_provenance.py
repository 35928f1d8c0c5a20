"""Script para executar auditoria dos logs de proveniência."""

import argparse
import sys
from pathlib import Path

# Adds the repository root to the path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.provenance import ProvenanceAuditor  # noqa: E402


def display_audit_result(result: dict):
    """Prints one run audit."""
    print(f"\n{'=' * 60}")
    print(f"AUDIT: {result['run_id']}")
    print(f"{'=' * 60}")

    if result.get("status") == "no_logs":
        print(f"\n⚠️  {result['message']}")
        return

    print(f"\n📅 Audit date: {result['audit_date']}")
    print(f"📊 Total operations: {result['total_operations']}")

    print("\n🔄 OPERATIONS BY STAGE:")
    for stage, count in result["operations_by_type"].items():
        print(f"   • {stage}: {count}")

    print(f"\n✅ SUCCESS RATE: {result['success_rate']:.1%}")

    print("\n🔐 DATASETS:")
    for dataset_id, traceable in result["datasets"].items():
        print(f"   {'✅' if traceable else '❌'} {dataset_id}")

    status_icon = "✅" if result["status"] == "complete" else "⚠️"
    print(f"\n{status_icon} STATUS: {result['status'].upper()}")
    for issue in result.get("issues", []):
        print(f"   • {issue}")


def display_timeline(auditor: ProvenanceAuditor, run_id: str, dataset_id: str):
    result = auditor.verify_traceability(run_id, dataset_id)
    print(f"\n{'=' * 60}")
    print(f"TRACEABILITY: {dataset_id}")
    print(f"{'=' * 60}")
    if "timeline" not in result:
        print(f"\n❌ NOT TRACEABLE: {result['reason']}")
        return
    if result["missing"]:
        print(f"\n❌ Missing stages: {', '.join(result['missing'])}")
    else:
        print("\n✅ Every required stage recorded")
    print("\n📅 TIMELINE:")
    for log in result["timeline"]:
        digest = (log.get("output_hash") or "-")[:12]
        print(f"   • {log['timestamp']} - {log['operation']} ({log.get('status', 'N/A')}) {digest}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("run_id", nargs="?", help="Run to audit (default: every run in the log directory)")
    parser.add_argument("--dataset", help="Show the stage timeline of one dataset")
    parser.add_argument("--logs-dir", type=Path, default=None, help="Provenance log directory (default: logs/)")
    args = parser.parse_args()

    auditor = ProvenanceAuditor(args.logs_dir)
    runs = [args.run_id] if args.run_id else auditor.list_runs()
    if not runs:
        print("⚠️  No provenance logs found.")
        return 0

    results = [auditor.audit_run(run_id) for run_id in runs]
    for result in results:
        display_audit_result(result)
    if args.run_id and args.dataset:
        display_timeline(auditor, args.run_id, args.dataset)

    print(f"\n{'=' * 60}")
    print("OVERALL SUMMARY")
    print(f"{'=' * 60}")
    print(f"   ✅ Complete: {sum(1 for r in results if r.get('status') == 'complete')}")
    print(f"   ⚠️  Warning: {sum(1 for r in results if r.get('status') == 'warning')}")
    print(f"   ❌ No logs: {sum(1 for r in results if r.get('status') == 'no_logs')}")
    return 0 if all(r.get("status") == "complete" for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
