#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""JSON execution logs, one file per CLI command run."""

import datetime
import json
import os
from typing import Any, List, Optional

from fileio import atomic_write_text


def log_command_run(
    command: str,
    argv: List[str],
    start_time: datetime.datetime,
    end_time: datetime.datetime,
    result: Any,
    logs_dir: str,
    success: bool = True,
    error: Optional[str] = None,
) -> str:
    """
    Log a CLI command run to a file.

    Args:
        command: Subcommand that was run (fit, eval, ...)
        argv: Full argument vector of the run
        start_time: When the command started
        end_time: When the command ended
        result: JSON-serializable summary of what the command produced
        logs_dir: Directory receiving the log files
        success: Whether the command succeeded
        error: Error message if the command failed

    Returns:
        Path to the log file that was written
    """
    log_entry = {
        "command": command,
        "argv": list(argv),
        "start_time": start_time.isoformat(),
        "end_time": end_time.isoformat(),
        "duration_seconds": (end_time - start_time).total_seconds(),
        "success": success,
        "result": result,
    }
    if error:
        log_entry["error"] = error

    timestamp = start_time.strftime("%Y%m%d_%H%M%S")
    safe_command = "".join(c if c.isalnum() else "_" for c in command) or "unknown"
    log_path = os.path.join(logs_dir, f"{timestamp}_{safe_command}.json")
    # Same command within one second: keep both files
    suffix = 1
    while os.path.exists(log_path):
        log_path = os.path.join(logs_dir, f"{timestamp}_{safe_command}_{suffix}.json")
        suffix += 1

    return atomic_write_text(log_path, json.dumps(log_entry, indent=2, ensure_ascii=False, default=str))
