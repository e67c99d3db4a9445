# tests/test_cli.py

import csv
import json
from fractions import Fraction
from pathlib import Path

import pytest

from conftest import GOLDEN_DIR, LETS_BUNDLE_DIR
from expnote.datasets import load_tasks
from expnote.history import read_trajectory_records
from expnote.memory import MemoryStore
from expnote.config import ExperimentConfig
from expnote_cli import EXIT_BACKEND, EXIT_FORMAT, EXIT_OK, EXIT_USAGE, episode_workers, main

TRAIN = str(GOLDEN_DIR / "train.jsonl")
TEST = str(GOLDEN_DIR / "test.jsonl")
SCRIPT = str(GOLDEN_DIR / "script.jsonl")
BACKEND_FLAGS = ["--backend", "scripted", "--script", SCRIPT, "--bundle", str(LETS_BUNDLE_DIR), "--n-train", "2"]


def _train(out_dir, variant="full"):
    return main(["train", "--variant", variant, "--train", TRAIN, "--out", str(out_dir)] + BACKEND_FLAGS)


def _test(out_dir, variant, memory=None):
    argv = ["test", "--variant", variant, "--test", TEST, "--out", str(out_dir)] + BACKEND_FLAGS
    if memory is not None:
        argv += ["--memory", str(memory)]
    return main(argv)


def _report(out_dir):
    with open(out_dir / "report.json", 'r', encoding='utf-8') as f:
        return json.load(f)


@pytest.fixture
def trained(tmp_path):
    out_dir = tmp_path / "train"
    assert _train(out_dir) == EXIT_OK
    return out_dir / "memory.jsonl"


def test_train_stores_exactly_the_scripted_notes(trained, golden):
    memory = MemoryStore.load(str(trained))

    expected = golden["train"]
    assert memory.store_count() == expected["memory_count"]
    assert memory.count_by_polarity() == {"positive": expected["positive_count"],
                                          "negative": expected["negative_count"]}
    assert [
        {"id": e.id, "key": e.key, "polarity": e.polarity.value, "source_case_id": e.source_case_id}
        for e in memory
    ] == expected["experiences"]


@pytest.mark.parametrize("variant", ["full", "positive", "negative"])
def test_retrieval_variants_match_golden(tmp_path, trained, golden, variant):
    out_dir = tmp_path / variant
    assert _test(out_dir, variant, memory=trained) == EXIT_OK

    report = _report(out_dir)
    assert report["accuracy"] == golden["accuracy"][variant]
    assert report["memory_count"] == golden["train"]["memory_count"]

    records = read_trajectory_records(str(out_dir / "test_trajectories.jsonl"))
    memory = MemoryStore.load(str(trained))
    for record in records:
        ids = record["retrieved_experience_ids"]
        assert ids == golden["retrieved"][variant][record["instance_id"]]
        prompt = record["steps"][0]["prompt_sent"]
        for experience_id in ids:
            assert memory.experiences[experience_id].value in prompt
        if not ids:
            assert "No relevant experience" in prompt


def test_disabled_runs_without_memory(tmp_path, golden):
    out_dir = tmp_path / "disabled"
    assert _test(out_dir, "disabled") == EXIT_OK

    report = _report(out_dir)
    assert report["accuracy"] == golden["accuracy"]["disabled"]
    assert report["memory_count"] == 0
    questions = {task.id: task.question for task in load_tasks(TEST)}
    for record in read_trajectory_records(str(out_dir / "test_trajectories.jsonl")):
        assert record["retrieved_experience_ids"] == []
        expected = questions[record["instance_id"]] + "\nExperiences:\nNo relevant experience"
        assert expected in record["steps"][0]["prompt_sent"]


def test_case_variant_matches_golden(tmp_path, golden):
    train_dir = tmp_path / "case-train"
    assert _train(train_dir, variant="case") == EXIT_OK
    memory = MemoryStore.load(str(train_dir / "memory.jsonl"))
    assert memory.store_count() == golden["train"]["memory_count"]
    assert all(e.value.startswith("Q: Splice") for e in memory)

    out_dir = tmp_path / "case-test"
    assert _test(out_dir, "case", memory=train_dir / "memory.jsonl") == EXIT_OK
    assert _report(out_dir)["accuracy"] == golden["accuracy"]["case"]


def test_eval_buckets(tmp_path, trained, golden):
    assert _test(tmp_path / "full", "full", memory=trained) == EXIT_OK
    assert _test(tmp_path / "disabled", "disabled") == EXIT_OK
    out_dir = tmp_path / "eval"

    assert main(["eval", "--base", str(tmp_path / "disabled" / "report.json"),
                 "--treated", str(tmp_path / "full" / "report.json"),
                 "--label", "LETS", "--out", str(out_dir)]) == EXIT_OK

    with open(out_dir / "buckets.csv", 'r', encoding='utf-8', newline='') as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["dataset", "F=>F", "F=>T", "T=>T", "T=>F", "n_cases"]
    expected = golden["buckets"]
    assert rows[1] == ["LETS", str(expected["ff"]), str(expected["ft"]), str(expected["tt"]), str(expected["tf"]), "4"]
    assert (out_dir / "manifest.json").exists()


def test_reruns_are_byte_identical(tmp_path):
    train_dir, test_dir = tmp_path / "train", tmp_path / "test"
    artifacts = [train_dir / "memory.jsonl", train_dir / "train_trajectories.jsonl", train_dir / "manifest.json",
                 test_dir / "report.json", test_dir / "test_trajectories.jsonl", test_dir / "manifest.json"]

    def run():
        assert _train(train_dir) == EXIT_OK
        assert _test(test_dir, "full", memory=train_dir / "memory.jsonl") == EXIT_OK
        return [path.read_bytes() for path in artifacts]

    assert run() == run()


def test_inputs_are_not_mutated(tmp_path, trained):
    before = {path: path.read_bytes() for path in (GOLDEN_DIR / "train.jsonl", GOLDEN_DIR / "test.jsonl",
                                                   GOLDEN_DIR / "script.jsonl", trained)}
    assert _test(tmp_path / "full", "full", memory=trained) == EXIT_OK
    assert {path: path.read_bytes() for path in before} == before


def test_manifest_records_config_and_digests(tmp_path, trained):
    manifest = json.loads((trained.parent / "manifest.json").read_text(encoding='utf-8'))

    assert manifest["command"] == "train"
    assert manifest["config"]["n_train"] == 2
    assert "api_key" not in manifest["config"]
    assert manifest["inputs"]["train"].startswith("sha256:")
    assert manifest["inputs"]["script"].startswith("sha256:")
    assert set(manifest["outputs"]) == {"memory", "train_trajectories"}


def test_test_requires_memory_unless_disabled(tmp_path):
    assert _test(tmp_path / "full", "full") == EXIT_USAGE


def test_backend_failure_exit_code(tmp_path):
    script = tmp_path / "empty.jsonl"
    script.write_text('{"matcher": "never appears", "reply": "ANSWER[x]"}\n', encoding='utf-8')
    argv = ["test", "--variant", "disabled", "--test", TEST, "--out", str(tmp_path / "out"),
            "--backend", "scripted", "--script", str(script), "--bundle", str(LETS_BUNDLE_DIR)]
    assert main(argv) == EXIT_BACKEND


def test_format_error_exit_code(tmp_path):
    tasks = tmp_path / "broken.jsonl"
    tasks.write_text('{"id": "a", "question": "q"\n', encoding='utf-8')
    argv = ["test", "--variant", "disabled", "--test", str(tasks), "--out", str(tmp_path / "out")] + BACKEND_FLAGS
    assert main(argv) == EXIT_FORMAT


def test_missing_input_is_usage_error(tmp_path):
    argv = ["train", "--train", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "out")] + BACKEND_FLAGS
    assert main(argv) == EXIT_USAGE


def test_gen_data(tmp_path):
    first, second = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["gen-data", "--count", "200", "--seed", "7", "--out", str(first)]) == EXIT_OK
    assert main(["gen-data", "--count", "200", "--seed", "7", "--out", str(second)]) == EXIT_OK

    assert first.read_bytes() == second.read_bytes()
    tasks = load_tasks(str(first))
    assert len(tasks) == 200
    assert len(first.read_text(encoding='utf-8').splitlines()) == 200


def test_gen_data_rejects_zero_count(tmp_path):
    with pytest.raises(SystemExit) as exc_info:
        main(["gen-data", "--count", "0", "--out", str(tmp_path / "x.jsonl")])
    assert exc_info.value.code == 2


def test_split_command(tmp_path):
    tasks = tmp_path / "tasks.jsonl"
    assert main(["gen-data", "--count", "30", "--seed", "1", "--out", str(tasks)]) == EXIT_OK
    assert main(["split", "--tasks", str(tasks), "--train-ratio", "0.6", "--seed", "2",
                 "--out", str(tmp_path / "split")]) == EXIT_OK

    train = load_tasks(str(tmp_path / "split" / "train.jsonl"))
    test = load_tasks(str(tmp_path / "split" / "test.jsonl"))
    assert (len(train), len(test)) == (18, 12)


def test_curve_command(tmp_path):
    out_dir = tmp_path / "curve"
    argv = ["curve", "--train", TRAIN, "--test", TEST, "--checkpoint-every", "3", "--out", str(out_dir)]
    assert main(argv + BACKEND_FLAGS) == EXIT_OK

    with open(out_dir / "curve.csv", 'r', encoding='utf-8', newline='') as f:
        rows = list(csv.DictReader(f))
    assert [int(r["n_train_samples"]) for r in rows] == [0, 3, 6]
    assert Fraction(rows[0]["accuracy"]) == Fraction(1, 2)
    assert Fraction(rows[-1]["accuracy"]) == Fraction(3, 4)


def test_efficiency_command_defaults_to_reference_results(tmp_path, capsys):
    assert main(["efficiency", "--out", str(tmp_path)]) == EXIT_OK

    with open(tmp_path / "efficiency.csv", 'r', encoding='utf-8', newline='') as f:
        rows = {row[0]: row[1:] for row in csv.reader(f)}
    assert rows["positive"] == ["0.219", "0.042", "0.643", "0.341"]
    assert "LETS" in capsys.readouterr().out


def test_mistyped_config_value_is_usage_error(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"k": "3", "variant": "disabled"}), encoding='utf-8')
    argv = ["test", "--config", str(config), "--test", TEST, "--out", str(tmp_path / "out")] + BACKEND_FLAGS
    assert main(argv) == EXIT_USAGE


SCRIPTED_FLAGS = ["--backend", "scripted", "--script", SCRIPT, "--n-train", "2"]


def test_task_flag_resolves_shipped_bundle(tmp_path):
    out_dir = tmp_path / "out"
    argv = ["test", "--variant", "disabled", "--test", TEST, "--task", "lets", "--out", str(out_dir)] + SCRIPTED_FLAGS
    assert main(argv) == EXIT_OK
    manifest = json.loads((out_dir / "manifest.json").read_text(encoding='utf-8'))
    assert Path(manifest["config"]["bundle_dir"]).resolve() == LETS_BUNDLE_DIR.resolve()
    assert _report(out_dir) == _report_of_disabled_run(tmp_path / "with-bundle")


def _report_of_disabled_run(out_dir):
    assert _test(out_dir, "disabled") == EXIT_OK
    return _report(out_dir)


def test_unknown_task_is_usage_error(tmp_path):
    argv = ["test", "--variant", "disabled", "--test", TEST, "--task", "sudoku", "--out", str(tmp_path)] + SCRIPTED_FLAGS
    assert main(argv) == EXIT_USAGE


def test_task_and_bundle_are_exclusive(tmp_path):
    argv = ["test", "--test", TEST, "--task", "lets", "--out", str(tmp_path)] + BACKEND_FLAGS
    with pytest.raises(SystemExit) as exc_info:
        main(argv)
    assert exc_info.value.code == EXIT_USAGE


def test_saved_config_reproduces_the_run(tmp_path):
    saved = tmp_path / "effective.json"
    first = tmp_path / "first"
    argv = ["test", "--variant", "disabled", "--test", TEST, "--out", str(first), "--save-config", str(saved)]
    assert main(argv + BACKEND_FLAGS) == EXIT_OK
    data = json.loads(saved.read_text(encoding='utf-8'))
    assert data["variant"] == "disabled"
    assert "api_key" not in data

    second = tmp_path / "second"
    assert main(["test", "--config", str(saved), "--out", str(second)]) == EXIT_OK
    assert (second / "report.json").read_bytes() == (first / "report.json").read_bytes()


@pytest.mark.parametrize("backend, max_workers, expected", [
    ("scripted", 4, 1),
    ("scripted", 1, 1),
    ("cassette", 8, 3),
    ("cassette", 2, 2),
])
def test_episode_workers(backend, max_workers, expected):
    config = ExperimentConfig(backend=backend, max_in_flight=3)
    assert episode_workers(max_workers, config) == expected


def test_scripted_test_pass_ignores_extra_workers(tmp_path, trained):
    serial, parallel = tmp_path / "serial", tmp_path / "parallel"
    assert _test(serial, "full", memory=trained) == EXIT_OK
    argv = ["test", "--variant", "full", "--test", TEST, "--out", str(parallel), "--memory", str(trained),
            "--max-workers", "4"] + BACKEND_FLAGS
    assert main(argv) == EXIT_OK
    assert (parallel / "report.json").read_bytes() == (serial / "report.json").read_bytes()
    assert (parallel / "test_trajectories.jsonl").read_bytes() == (serial / "test_trajectories.jsonl").read_bytes()
