"""Runs synth -> train (one short epoch) -> eval and validates the eval JSON."""
import json
import pathlib
import shutil
import subprocess
import sys

import jsonschema


def run(*args):
    proc = subprocess.run(args, capture_output=True, text=True)
    if proc.returncode != 0:
        sys.exit(f"{' '.join(args)} exited {proc.returncode}: {proc.stderr}")
    return proc.stdout


def main():
    nvsed, schema_path, work = sys.argv[1], pathlib.Path(sys.argv[2]), pathlib.Path(sys.argv[3])
    shutil.rmtree(work, ignore_errors=True)
    work.mkdir(parents=True)
    spec = {"train_users": 2, "eval_users": 1, "repetitions": 4, "aggressor_seconds": 30}
    (work / "spec.json").write_text(json.dumps(spec))
    cfg = {"epochs": 1, "steps_per_epoch": 2, "batch_frames": 200, "validation_batches": 1,
           "model": {"channels": 16, "groups": 4, "num_blocks": 1}}
    (work / "train.json").write_text(json.dumps(cfg))

    corpus = work / "corpus"
    run(nvsed, "synth", "--spec", str(work / "spec.json"), "--out", str(corpus))
    model = work / "model.nvsd"
    run(nvsed, "train", "--corpus", str(corpus / "train"), "--aggressors", str(corpus / "aggressors"),
        "--config", str(work / "train.json"), "--out", str(model))

    schema = json.loads(schema_path.read_text())
    for extra in ([], ["--one-active"], ["--aggressors", str(corpus / "aggressors")]):
        report = json.loads(run(nvsed, "eval", "--model", str(model), "--eval", str(corpus / "eval"),
                                "--quiet", *extra))
        jsonschema.validate(report, schema)
        if extra and extra[0] == "--aggressors":
            assert "aggressors" in report
    print("eval report matches", schema_path.name)


if __name__ == "__main__":
    main()
