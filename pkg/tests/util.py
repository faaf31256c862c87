"""Shared builders for test fixtures."""

from __future__ import annotations

import base64
import json

PNG_1PX = base64.b64decode(
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJ"
    "AAAADUlEQVR42mP8z8BQDwAEhQGAhKmMIQAAAABJRU5ErkJggg==")

BT = "<|begin_of_thought|>"
ET = "<|end_of_thought|>"
BS = "<|begin_of_solution|>"
ES = "<|end_of_solution|>"


def transcript(thought: str, solution: str) -> str:
    return f"{BT}{thought}{ET}\n\n{BS}{solution}{ES}"


def boxed_reply(answer: str, thought: str = "step one. step two.",
                prose: str = "Therefore the answer is") -> str:
    return transcript(thought, f"{prose} $\\boxed{{{answer}}}$.")


def text_record(i: int, domain: str = "math", length: int = 12,
                source: str = "R1", query: str | None = None) -> dict:
    thought = " ".join(f"w{j}" for j in range(length))
    return {
        "id": f"rec-{domain}-{i}",
        "modality": "textual",
        "domain": domain,
        "query": query if query is not None else f"question {domain} {i}",
        "image_ref": None,
        "thought": thought,
        "solution": f"The result is $\\boxed{{{i}}}$.",
        "source": source,
    }


def visual_record(i: int, image_ref: str, domain: str = "geometry",
                  length: int = 10, source: str = "QVQ") -> dict:
    doc = text_record(i, domain=domain, length=length, source=source,
                      query=f"visual question {i}")
    doc["id"] = f"vrec-{i}"
    doc["modality"] = "visual"
    doc["image_ref"] = image_ref
    return doc


def jsonl(docs) -> str:
    return "\n".join(json.dumps(d, ensure_ascii=False) for d in docs) + "\n"


def pool_problem(i: int, dataset: str = "Geometry3K",
                 image_ref: str = "img.png",
                 ground_truth: str = "42") -> dict:
    return {
        "id": f"prob-{i:03d}",
        "dataset": dataset,
        "question": f"[[P{i:03d}]] What is the value in figure {i}?",
        "image_ref": image_ref,
        "ground_truth": ground_truth,
    }


def benchmark_item(i: int, benchmark: str = "MathVision",
                   split: str = "test", gold: str = "42",
                   difficulty: str | None = None,
                   flags: tuple = ()) -> dict:
    return {
        "id": f"{benchmark.lower()}-{i:03d}",
        "benchmark": benchmark,
        "split": split,
        "question": f"[[Q{i:03d}]] Compute quantity {i}.",
        "image_ref": None,
        "gold": gold,
        "difficulty": difficulty,
        "subject": None,
        "category_flags": list(flags),
    }
