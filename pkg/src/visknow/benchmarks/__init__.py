"""Benchmark export and scoring: link prediction, part segmentation, VQA."""

from .ranking import RankMode, RankQuery, rank_metrics
from .textbench import TextBenchSplit, export_textbench, read_textbench, write_textbench
from .partbench import (PartBenchSplit, export_partbench, instance_ap,
                        merge_instance_masks, semantic_seg_metrics)
from .vqa import VQAItem, build_vqa_benchmark, read_vqa_benchmark, score_vqa_run, write_vqa_benchmark

__all__ = [
    "RankMode", "RankQuery", "rank_metrics",
    "TextBenchSplit", "export_textbench", "read_textbench", "write_textbench",
    "PartBenchSplit", "export_partbench", "instance_ap", "merge_instance_masks",
    "semantic_seg_metrics",
    "VQAItem", "build_vqa_benchmark", "read_vqa_benchmark", "score_vqa_run",
    "write_vqa_benchmark",
]
