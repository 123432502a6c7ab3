"""Runs every subcommand on a small config and validates each emitted JSON document."""

import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema

SMALL = [
    "dataset.n_regular=5", "dataset.n_ur=3", "dataset.samples_per_regular=30",
    "dataset.input_dim=8", "dataset.shared_cov_rank=3", "network.hidden_dim=10",
    "network.rich_dim=6", "network.feature_dim=6", "trainer.pretrain_iters=200",
    "trainer.n_iter=10", "trainer.total_alternations=2", "trainer.batch_size=16",
]

DOCUMENTS = {
    "summary.json": "train_summary",
    "eval_report.json": "eval_report",
    "eval_report_compare.json": "eval_report",
    "comparison.json": "comparison",
    "center_study.json": "center_study",
    "transfer_summary.json": "transfer_summary",
    "manifest.json": "manifest",
}


def main(tool, schema_dir):
    schemas = {p.name.removesuffix(".schema.json"): json.loads(p.read_text())
               for p in pathlib.Path(schema_dir).glob("*.schema.json")}
    for s in schemas.values():
        jsonschema.Draft202012Validator.check_schema(s)

    with tempfile.TemporaryDirectory() as tmp:
        root = pathlib.Path(tmp)
        overrides = [a for kv in SMALL for a in ("--set", kv)]
        d, t = str(root / "d"), str(root / "t")
        runs = [
            ["generate", "--out", d, *overrides],
            ["train", "--mode", "both", "--data", d, "--out", t, *overrides],
            ["eval", "--data", d, "--checkpoint", f"{t}/ftl.ftlc", "--compare",
             f"{t}/baseline.ftlc", "--out", str(root / "e")],
            ["transfer-demo", "--data", d, "--checkpoint", f"{t}/ftl.ftlc", "--count", "50",
             "--out", str(root / "x")],
            ["center-study", "--data", d, "--reps", "5", "--out", str(root / "c")],
            ["train", "--data", str(root / "missing"), "--out", str(root / "z")],
        ]
        lines = []
        for args in runs:
            proc = subprocess.run([tool, *args], capture_output=True, text=True)
            expected = 3 if "missing" in " ".join(args) else 0
            if proc.returncode != expected:
                sys.exit(f"{args[0]} exited {proc.returncode}: {proc.stderr}")
            lines += [json.loads(line) for line in proc.stdout.splitlines()]

        checked = 0
        for line in lines:
            jsonschema.validate(line, schemas["event"])
            checked += 1
        for path in root.rglob("*.json"):
            jsonschema.validate(json.loads(path.read_text()), schemas[DOCUMENTS[path.name]])
            checked += 1
        for path in root.rglob("events.jsonl"):
            for line in path.read_text().splitlines():
                jsonschema.validate(json.loads(line), schemas["event"])
                checked += 1
    print(f"validated {checked} documents against {len(schemas)} schemas")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
