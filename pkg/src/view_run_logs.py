#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""Listing, filtering and formatting of CLI execution logs."""

import datetime
import json
import logging
import os
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)


def list_log_files(logs_dir: str) -> List[str]:
    """
    List all log files in the logs directory, newest first.

    Args:
        logs_dir: Path to the logs directory

    Returns:
        List of log file paths
    """
    if not os.path.isdir(logs_dir):
        return []
    log_files = [os.path.join(logs_dir, name) for name in os.listdir(logs_dir) if name.endswith(".json")]
    # Names start with the timestamp
    log_files.sort(key=os.path.basename, reverse=True)
    return log_files


def parse_log_file(log_path: str) -> Dict:
    with open(log_path, "r", encoding="utf-8") as f:
        return json.load(f)


def format_log_entry(log_data: Dict, verbose: bool = False) -> str:
    """
    Format a log entry for display.

    Args:
        log_data: Parsed log file
        verbose: Include the argument vector and full result

    Returns:
        Multi-line description
    """
    start_time = datetime.datetime.fromisoformat(log_data["start_time"])
    formatted = f"Command: {log_data['command']}\n"
    formatted += f"Start: {start_time.strftime('%Y-%m-%d %H:%M:%S')}\n"
    formatted += f"Duration: {log_data['duration_seconds']:.2f} seconds\n"
    formatted += f"Status: {'Success' if log_data.get('success', True) else 'Failed'}\n"
    if log_data.get("error"):
        formatted += f"Error: {log_data['error']}\n"
    if verbose:
        formatted += f"Arguments: {' '.join(log_data.get('argv', []))}\n"
        if log_data.get("result") is not None:
            formatted += "\nResult:\n" + json.dumps(log_data["result"], indent=2)
    return formatted


def filter_logs(
    log_files: List[str],
    command: Optional[str] = None,
    start_date: Optional[datetime.datetime] = None,
    end_date: Optional[datetime.datetime] = None,
    success_only: bool = False,
    failed_only: bool = False,
) -> List[str]:
    """
    Filter log files based on criteria.

    Args:
        log_files: List of log file paths
        command: Keep runs of this subcommand
        start_date: Keep runs started at or after this time
        end_date: Keep runs started at or before this time
        success_only: Only successful runs
        failed_only: Only failed runs

    Returns:
        The matching paths, in input order
    """
    filtered_logs = []
    for log_path in log_files:
        try:
            log_data = parse_log_file(log_path)
        except (OSError, json.JSONDecodeError) as e:
            logger.warning("skipping unreadable log file %s: %s", log_path, e)
            continue

        if command and log_data.get("command") != command:
            continue
        if success_only and not log_data.get("success", True):
            continue
        if failed_only and log_data.get("success", True):
            continue
        log_start_time = datetime.datetime.fromisoformat(log_data["start_time"])
        if start_date and log_start_time < start_date:
            continue
        if end_date and log_start_time > end_date:
            continue
        filtered_logs.append(log_path)
    return filtered_logs


def summarize_logs(log_files: List[str]) -> str:
    """One block per log file: name, command, time and status."""
    lines = [f"Found {len(log_files)} log files:"]
    for i, log_path in enumerate(log_files):
        log_data = parse_log_file(log_path)
        start_time = datetime.datetime.fromisoformat(log_data["start_time"])
        status = "Success" if log_data.get("success", True) else "Failed"
        lines.append(f"{i + 1}. {os.path.basename(log_path)}")
        lines.append(f"   Command: {log_data['command']}")
        lines.append(f"   Time: {start_time.strftime('%Y-%m-%d %H:%M:%S')}")
        lines.append(f"   Status: {status}")
    return "\n".join(lines)
