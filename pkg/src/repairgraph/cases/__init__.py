"""Case-study tasks and their scripted model replies, for offline runs."""

from importlib import resources
from pathlib import Path


def cases_dir() -> Path:
    return Path(str(resources.files(__package__)))


def tasks_dir() -> Path:
    return cases_dir() / "tasks"


def playbooks_dir() -> Path:
    return cases_dir() / "playbooks"
