# /core/log.py

import logging
from pathlib import Path


def setup_logging(level: str = "INFO", log_file: str | Path | None = None) -> logging.Logger:
    """
    콘솔(및 선택적으로 파일)에 로그를 남기도록 루트 로거를 설정합니다.

    Args:
        level (str): 로그 레벨 이름.
        log_file (str | Path | None): 지정 시 타임스탬프가 포함된 파일 로그를 추가합니다.

    Returns:
        logging.Logger: 설정된 루트 로거.
    """
    logger = logging.getLogger()
    logger.setLevel(level.upper())
    # 반복 호출 시 핸들러가 중복되지 않도록 정리
    for handler in list(logger.handlers):
        logger.removeHandler(handler)

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(logging.Formatter("[%(levelname)s] %(message)s"))
    logger.addHandler(console_handler)

    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, mode="w", encoding="utf-8")
        file_handler.setFormatter(logging.Formatter("%(asctime)s [%(levelname)s] %(name)s: %(message)s"))
        logger.addHandler(file_handler)

    return logger
