"""Data file resolution for paths referenced from experiment configs."""

from pathlib import Path

# Directories to skip when searching for a file by path suffix.
DATA_SEARCH_IGNORE = frozenset({".git", "__pycache__", ".venv", "venv", "results"})


def resolve_data_file(file_path: str, search_dirs: list[Path]) -> Path | None:
    """Resolve a config-relative file path to an existing file.

    Absolute paths are used as given. Relative paths are tried against each search
    directory in order, then each directory is searched for a file whose relative
    path ends with the given one (``mushroom.csv`` finds ``uci/mushroom.csv``).

    Returns:
        Resolved absolute Path, or None if nothing matches.
    """
    normalized = file_path.strip().replace("\\", "/")
    if not normalized:
        return None
    direct = Path(normalized)
    if direct.is_absolute():
        return direct.resolve() if direct.is_file() else None
    for base in search_dirs:
        candidate = (base / normalized).resolve()
        if candidate.is_file():
            return candidate
    for base in search_dirs:
        if not base.is_dir():
            continue
        matches: list[Path] = []
        for path in base.rglob(direct.name):
            if not path.is_file() or any(ign in path.parts for ign in DATA_SEARCH_IGNORE):
                continue
            rel = str(path.relative_to(base)).replace("\\", "/")
            if rel == normalized or rel.endswith("/" + normalized):
                matches.append(path.resolve())
        if matches:
            # Shortest path wins, i.e. the shallowest match.
            return min(matches, key=lambda p: (len(str(p)), str(p)))
    return None
