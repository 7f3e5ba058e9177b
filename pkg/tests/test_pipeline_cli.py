import json
import os
import shutil
import subprocess
import sys

import pytest

from conftest import FIXTURES
from visknow.cli import (EXIT_CORRUPT, EXIT_OK, EXIT_PRECONDITION,
                         EXIT_PROVIDER, main)
from visknow.config import load_config
from visknow.persistence import load_kb

BASE_CONFIG = """\
kb_dir = "kb"
seed = 7
images_per_category = 10

[paths]
docs = "docs"
manifest = "manifest.jsonl"

[train]
model = "transe"
dim = 8
epochs = 3
batch_size = 16
negatives = 4
lr = 0.05

[providers.llm]
stub_dir = "llm"

[providers.detector]
stub_file = "detections.json"

[providers.segmenter]
stub = "echo"

[providers.verifier]
stub_text = "yes"

[providers.embedder]
stub = true
dimension = 8
"""

# same KB, no llm table: benchmark questions come from phrase templates
VQA_CONFIG = """\
kb_dir = "kb"
seed = 7

[paths]
docs = "docs"
"""

KB_FILES = ("entities.jsonl", "relations.jsonl", "triplets.jsonl",
            "manifest.jsonl", "annotations.jsonl", "meta.json")
TEXT_FILES = ("train.tsv", "test.tsv", "entities.txt", "relations.txt",
              "split.json")


def _make_workspace(root) -> str:
    ws = str(root)
    os.makedirs(os.path.join(ws, "docs"))
    for name in ("zebra", "tiger", "panda", "dolphin", "eagle"):
        shutil.copy(os.path.join(FIXTURES, "corpus", f"{name}.json"),
                    os.path.join(ws, "docs", f"{name}.json"))
    os.makedirs(os.path.join(ws, "llm"))
    shutil.copy(os.path.join(FIXTURES, "llm", "responses.jsonl"),
                os.path.join(ws, "llm", "responses.jsonl"))
    shutil.copy(os.path.join(FIXTURES, "detections.json"),
                os.path.join(ws, "detections.json"))
    shutil.copy(os.path.join(FIXTURES, "manifest.jsonl"),
                os.path.join(ws, "manifest.jsonl"))
    with open(os.path.join(ws, "config.toml"), "w", encoding="utf-8") as fh:
        fh.write(BASE_CONFIG)
    with open(os.path.join(ws, "vqa.toml"), "w", encoding="utf-8") as fh:
        fh.write(VQA_CONFIG)
    return ws


@pytest.fixture()
def workspace(tmp_path):
    return _make_workspace(tmp_path / "ws")


def _run(ws, stage, capsys, config="config.toml", extra=()):
    code = main([stage, "--config", os.path.join(ws, config), *extra])
    out = capsys.readouterr()
    report = json.loads(out.out) if code == EXIT_OK and out.out.strip() else {}
    return code, report, out.err


def _kb_bytes(ws) -> dict[str, bytes]:
    blobs = {}
    kb = os.path.join(ws, "kb")
    for name in KB_FILES:
        with open(os.path.join(kb, name), "rb") as fh:
            blobs[name] = fh.read()
    pending = os.path.join(kb, "review", "pending.jsonl")
    if os.path.exists(pending):
        with open(pending, "rb") as fh:
            blobs["pending.jsonl"] = fh.read()
    for name in TEXT_FILES:
        path = os.path.join(kb, "bench", "text", name)
        if os.path.exists(path):
            with open(path, "rb") as fh:
                blobs[f"text/{name}"] = fh.read()
    return blobs


class TestExtract:
    def test_extract_builds_expected_graph(self, workspace, capsys):
        code, report, _ = _run(workspace, "extract", capsys)
        assert code == EXIT_OK
        counts = report["counts"]
        assert counts["documents"] == 5
        assert counts["segments"] == 10
        assert counts["rejected"] == 0
        graph, manifest = load_kb(os.path.join(workspace, "kb"))
        assert len(graph.entities) == 30
        assert len(graph.relations) == 10
        assert len(graph.triplets) == 32
        assert sorted(graph.roots) == ["dolphin", "eagle", "panda", "tiger",
                                       "zebra"]
        assert manifest.entries == {}
        # 10% triplet spot check lands in the review queue
        assert counts["review_items"] == 3
        pending = os.path.join(workspace, "kb", "review", "pending.jsonl")
        with open(pending, "r", encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        assert len(rows) == 3
        assert all(r["kind"] == "triplet" for r in rows)
        assert all(r["payload"]["source_sentence"] for r in rows)

    def test_report_line_appended_per_run(self, workspace, capsys):
        _run(workspace, "extract", capsys)
        _run(workspace, "extract", capsys)
        path = os.path.join(workspace, "kb", "reports", "extract.jsonl")
        with open(path, "r", encoding="utf-8") as fh:
            reports = [json.loads(line) for line in fh]
        assert len(reports) == 2
        assert {r["stage"] for r in reports} == {"extract"}
        assert reports[0]["config_hash"] == reports[1]["config_hash"]
        assert all(r["seed"] == 7 for r in reports)

    def test_missing_docs_dir_fails_precondition(self, workspace, capsys):
        shutil.rmtree(os.path.join(workspace, "docs"))
        code, _, err = _run(workspace, "extract", capsys)
        assert code == EXIT_PRECONDITION
        assert "does not exist" in err


class TestStageOrdering:
    @pytest.mark.parametrize("stage", ["align", "apply", "export-text",
                                       "annotate", "build-vqa"])
    def test_stages_refuse_to_run_without_kb(self, workspace, capsys, stage):
        code, _, err = _run(workspace, stage, capsys)
        assert code == EXIT_PRECONDITION
        assert "extract" in err

    def test_eval_kgc_requires_checkpoint(self, workspace, capsys):
        assert _run(workspace, "extract", capsys)[0] == EXIT_OK
        assert _run(workspace, "export-text", capsys)[0] == EXIT_OK
        code, _, err = _run(workspace, "eval-kgc", capsys)
        assert code == EXIT_PRECONDITION
        assert "train-embed" in err

    def test_train_requires_text_export(self, workspace, capsys):
        assert _run(workspace, "extract", capsys)[0] == EXIT_OK
        code, _, err = _run(workspace, "train-embed", capsys)
        assert code == EXIT_PRECONDITION
        assert "export-text" in err


class TestLocking:
    def test_stale_lock_blocks_and_unblocks(self, workspace, capsys):
        kb = os.path.join(workspace, "kb")
        os.makedirs(kb)
        lock = os.path.join(kb, ".visknow.lock")
        with open(lock, "w", encoding="utf-8") as fh:
            fh.write("12345")
        code, _, err = _run(workspace, "extract", capsys)
        assert code == EXIT_PRECONDITION
        assert "lock" in err.lower()
        os.unlink(lock)
        code, _, _ = _run(workspace, "extract", capsys)
        assert code == EXIT_OK
        assert not os.path.exists(lock)  # released on success


class TestDeterminism:
    def test_extract_align_export_is_byte_identical(self, tmp_path, capsys):
        blobs = []
        for name in ("a", "b"):
            ws = _make_workspace(tmp_path / name)
            for stage in ("extract", "align", "export-text"):
                code, _, err = _run(ws, stage, capsys)
                assert code == EXIT_OK, (stage, err)
            blobs.append(_kb_bytes(ws))
        assert blobs[0].keys() == blobs[1].keys()
        for name in blobs[0]:
            assert blobs[0][name] == blobs[1][name], f"{name} differs"
        assert "text/train.tsv" in blobs[0]

    def test_seed_override_changes_split_only(self, workspace, capsys):
        _run(workspace, "extract", capsys)
        assert _run(workspace, "export-text", capsys)[0] == EXIT_OK
        first = _kb_bytes(workspace)
        assert _run(workspace, "export-text", capsys,
                    extra=["--seed", "8"])[0] == EXIT_OK
        second = _kb_bytes(workspace)
        assert first["entities.jsonl"] == second["entities.jsonl"]
        assert first["text/split.json"] != second["text/split.json"]


class TestAnnotateAlignApply:
    def test_annotate_attaches_verified_regions(self, workspace, capsys):
        assert _run(workspace, "extract", capsys)[0] == EXIT_OK
        code, report, err = _run(workspace, "annotate", capsys)
        assert code == EXIT_OK, err
        counts = report["counts"]
        assert counts["images"] == 11
        assert counts["detections"] > 0
        assert counts["attached"] > 0
        assert counts["rejected"] == 0
        graph, manifest = load_kb(os.path.join(workspace, "kb"))
        assert len(manifest.entries) == 11
        grounded = [e for e in graph.entities.values() if e.groundings]
        assert grounded
        roots = set(graph.roots.values())
        parts = [g for e in grounded if e.id not in roots
                 for g in e.groundings]
        assert parts
        # echo segmenter gives every detector box a mask; category entities
        # carry whole-frame boxes without one
        assert all(g.mask is not None for g in parts)
        for rid in roots:
            for g in graph.entities[rid].groundings:
                assert g.box.as_tuple()[:2] == (0.0, 0.0)
                assert g.mask is None

    def test_align_grounds_visual_relations(self, workspace, capsys):
        assert _run(workspace, "extract", capsys)[0] == EXIT_OK
        assert _run(workspace, "annotate", capsys)[0] == EXIT_OK
        code, report, _ = _run(workspace, "align", capsys)
        assert code == EXIT_OK
        counts = report["counts"]
        assert counts["inherited"] >= 0
        assert counts["grounded_triplets"] > 0

    def test_apply_writes_rejected_ids_file(self, workspace, capsys):
        assert _run(workspace, "extract", capsys)[0] == EXIT_OK
        code, report, _ = _run(workspace, "apply", capsys)
        assert code == EXIT_OK  # nothing decided yet: empty apply
        path = os.path.join(workspace, "kb", "review",
                            "rejected_triplets.json")
        with open(path, "r", encoding="utf-8") as fh:
            assert json.load(fh) == []

    def test_export_part_reports_sparse_categories(self, workspace, capsys):
        assert _run(workspace, "extract", capsys)[0] == EXIT_OK
        assert _run(workspace, "annotate", capsys)[0] == EXIT_OK
        code, _, err = _run(workspace, "export-part", capsys)
        assert code == EXIT_PRECONDITION
        assert "annotated images" in err


class TestBenchAndTrain:
    def test_build_vqa_with_template_questions(self, workspace, capsys):
        assert _run(workspace, "extract", capsys)[0] == EXIT_OK
        assert _run(workspace, "annotate", capsys)[0] == EXIT_OK
        code, report, err = _run(workspace, "build-vqa", capsys,
                                 config="vqa.toml")
        assert code == EXIT_OK, err
        items_file = os.path.join(workspace, "kb", "bench", "vqa",
                                  "items.jsonl")
        with open(items_file, "r", encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        assert len(rows) == report["counts"]["items"] > 0
        assert all(len(r["context_sets"]) == 4 for r in rows)

    def test_train_then_eval_kgc(self, workspace, capsys):
        assert _run(workspace, "extract", capsys)[0] == EXIT_OK
        assert _run(workspace, "export-text", capsys)[0] == EXIT_OK
        code, report, err = _run(workspace, "train-embed", capsys)
        assert code == EXIT_OK, err
        assert report["counts"]["epochs"] == 3
        ckpt = os.path.join(workspace, "kb", "models", "transe.ckpt")
        assert os.path.exists(ckpt)
        code, report, _ = _run(workspace, "eval-kgc", capsys)
        assert code == EXIT_OK
        metrics = os.path.join(workspace, "kb", "bench", "text",
                               "metrics.json")
        with open(metrics, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        assert set(data) == {"MRR", "HITS@1", "HITS@3", "HITS@10", "queries"}


class TestConfig:
    def test_hash_ignores_environment_secrets(self, workspace):
        path = os.path.join(workspace, "config.toml")
        plain = load_config(path, env={})
        secret = load_config(path, env={"VISKNOW_LLM_API_KEY": "s3cr3t",
                                        "VISKNOW_TOKEN": "tok"})
        assert plain.config_hash == secret.config_hash
        assert secret.providers["llm"]["api_key"] == "s3cr3t"
        assert secret.service_token == "tok"
        assert "api_key" not in plain.providers["llm"]

    def test_hash_tracks_file_content(self, workspace):
        path = os.path.join(workspace, "config.toml")
        first = load_config(path, env={}).config_hash
        with open(path, "a", encoding="utf-8") as fh:
            fh.write('\n[thresholds]\nscore_floor = 0.4\n')
        assert load_config(path, env={}).config_hash != first

    def test_invalid_toml_is_a_precondition_failure(self, workspace, capsys):
        path = os.path.join(workspace, "config.toml")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("kb_dir = [unterminated")
        code, _, err = _run(workspace, "extract", capsys)
        assert code == EXIT_PRECONDITION
        assert "TOML" in err

    def test_stage_toggle_skips_without_side_effects(self, workspace, capsys):
        path = os.path.join(workspace, "config.toml")
        with open(path, "a", encoding="utf-8") as fh:
            fh.write("\n[stages]\nextract = false\n")
        code, report, _ = _run(workspace, "extract", capsys)
        assert code == EXIT_OK
        assert report["status"] == "skipped"
        assert not os.path.exists(os.path.join(workspace, "kb", "meta.json"))

    def test_missing_config_flag(self, workspace, capsys):
        code = main(["extract"])
        err = capsys.readouterr().err
        assert code == EXIT_PRECONDITION
        assert "--config" in err

    def test_unknown_stage_rejected(self):
        with pytest.raises(SystemExit):
            main(["compress", "--config", "x.toml"])

    def test_kb_override_flag(self, workspace, tmp_path, capsys):
        alt = str(tmp_path / "elsewhere")
        code, _, _ = _run(workspace, "extract", capsys,
                          extra=["--kb", alt])
        assert code == EXIT_OK
        assert os.path.exists(os.path.join(alt, "meta.json"))
        assert not os.path.exists(os.path.join(workspace, "kb"))

    def test_corrupt_kb_maps_to_exit_4(self, workspace, capsys):
        assert _run(workspace, "extract", capsys)[0] == EXIT_OK
        with open(os.path.join(workspace, "kb", "entities.jsonl"), "a",
                  encoding="utf-8") as fh:
            fh.write("{broken\n")
        code, _, err = _run(workspace, "align", capsys)
        assert code == EXIT_CORRUPT
        assert "corruption" in err


def test_console_script_is_installed(workspace):
    proc = subprocess.run(
        ["visknow", "extract", "--config",
         os.path.join(workspace, "config.toml")],
        capture_output=True, text=True, timeout=120)
    assert proc.returncode == EXIT_OK, proc.stderr
    assert json.loads(proc.stdout)["stage"] == "extract"
