# -*- coding: utf8 -*-
import copy
import logging
import os
import sys
from logging.handlers import TimedRotatingFileHandler

from colorama import init, Fore, Style

init()

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(module)s:%(lineno)d %(funcName)s - %(message)s"

LEVEL_COLORS = {
    logging.DEBUG: Fore.LIGHTWHITE_EX,
    logging.INFO: Fore.GREEN,
    logging.WARNING: Fore.YELLOW,
    logging.ERROR: Fore.LIGHTRED_EX,
    logging.CRITICAL: Fore.RED + Style.BRIGHT,
}


class ColoredFormatter(logging.Formatter):
    """只給 console 上色；record 是共用的，複製後再改，檔案裡不會有色碼"""

    def format(self, record):
        color = LEVEL_COLORS.get(record.levelno)
        if color is None:
            return super().format(record)
        record = copy.copy(record)
        record.msg = f"{color}{record.msg}{Style.RESET_ALL}"
        return super().format(record)


def _log_dir(name: str, module_name: str) -> str:
    """LAB_LOG_DIR 優先，否則放在呼叫檔案旁的 log/<module>"""
    root = os.environ.get("LAB_LOG_DIR")
    if root:
        return os.path.join(root, module_name)
    return os.path.join(os.path.dirname(os.path.abspath(name)), "log", module_name)


def _console_level() -> int:
    level = logging.getLevelName(os.environ.get("LAB_LOG_LEVEL", "INFO").upper())
    return level if isinstance(level, int) else logging.INFO


def get_logger(name):
    """
    安裝 console + 每日輪替的檔案 handler（保留 7 份），回傳 module logger。
    console 層級由 LAB_LOG_LEVEL 控制，檔案一律收 DEBUG
    """
    module_name = os.path.splitext(os.path.basename(name))[0]
    log_path = _log_dir(name, module_name)
    os.makedirs(log_path, exist_ok=True)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(_console_level())
    console_handler.setFormatter(ColoredFormatter(fmt=LOG_FORMAT))

    file_handler = TimedRotatingFileHandler(
        filename=os.path.join(log_path, f"{module_name}.log"),
        when="midnight",
        backupCount=7,
        encoding="utf-8",
    )
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(logging.Formatter(fmt=LOG_FORMAT))

    logging.basicConfig(level=logging.NOTSET, handlers=[file_handler, console_handler])

    return logging.getLogger(module_name)
