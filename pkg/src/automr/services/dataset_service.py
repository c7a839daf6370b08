"""Line-delimited JSON datasets of query/answer pairs."""

import json
from pathlib import Path
from typing import Iterable, List, Union

from pydantic import ValidationError

from ..core.exceptions import DatasetError
from ..core.logging import get_logger
from ..core.models import DatasetRecord, TaskKind

logger = get_logger(__name__)

REQUIRED_FIELDS = ("query", "answer")


def _parse_line(line: str, number: int) -> DatasetRecord:
    try:
        data = json.loads(line)
    except json.JSONDecodeError as e:
        raise DatasetError(f"line {number}: invalid JSON", str(e))
    if not isinstance(data, dict):
        raise DatasetError(f"line {number}: expected an object")

    for field in REQUIRED_FIELDS:
        if field not in data:
            raise DatasetError(f"line {number}: missing field {field}")

    try:
        task = TaskKind(data.get("task", TaskKind.GENERIC.value))
    except ValueError:
        raise DatasetError(
            f"line {number}: invalid task {data['task']!r}",
            f"expected one of {', '.join(t.value for t in TaskKind)}",
        )

    try:
        return DatasetRecord(query=str(data["query"]), answer=str(data["answer"]), task=task)
    except ValidationError as e:
        field = ".".join(str(part) for part in e.errors()[0]["loc"])
        raise DatasetError(f"line {number}: empty field {field}")


def load_dataset(path: Union[str, Path]) -> List[DatasetRecord]:
    """Read one record per non-blank line, in file order."""
    dataset_path = Path(path)
    if not dataset_path.is_file():
        raise DatasetError(f"Dataset file not found: {dataset_path}")

    records: List[DatasetRecord] = []
    with open(dataset_path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if line.strip():
                records.append(_parse_line(line, number))

    if not records:
        raise DatasetError(f"Dataset file is empty: {dataset_path}")

    logger.info("dataset_loaded", path=str(dataset_path), records=len(records))
    return records


def save_dataset(records: Iterable[DatasetRecord], path: Union[str, Path]) -> Path:
    """Write records in the format ``load_dataset`` reads."""
    dataset_path = Path(path)
    dataset_path.parent.mkdir(parents=True, exist_ok=True)
    with open(dataset_path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.model_dump(mode="json"), ensure_ascii=False) + "\n")
    return dataset_path
