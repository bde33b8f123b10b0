# /core/errors.py

"""
RasterSim 전역 예외 계층.
각 연산의 오류 조건은 아래 클래스 중 하나로 보고됩니다.
"""


class InputError(ValueError):
    """ 입력 데이터가 연산의 전제 조건을 만족하지 않을 때 발생합니다. """


class ShapeError(InputError):
    """ 텐서 형상이 호환되지 않을 때 발생합니다. 메시지에 두 형상이 모두 포함됩니다. """

    def __init__(self, message: str, lhs=None, rhs=None):
        if lhs is not None or rhs is not None:
            message = f"{message}: {tuple(lhs) if lhs is not None else None} vs {tuple(rhs) if rhs is not None else None}"
        super().__init__(message)
        self.lhs = lhs
        self.rhs = rhs


class SchemaError(InputError):
    """ 파일 스키마 위반. 줄 번호 또는 JSON 경로를 함께 보고합니다. """

    def __init__(self, message: str, location: str | None = None):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class UsageError(RuntimeError):
    """ API를 잘못된 순서나 방식으로 호출했을 때 발생합니다. """


class ConfigError(ValueError):
    """ 설정값이 잘못되었거나 실행 불가능할 때 발생합니다. """


class CorruptionError(IOError):
    """ 가중치 파일의 체크섬이 일치하지 않을 때 발생합니다. """


class VersionError(IOError):
    """ 가중치 파일의 버전이 현재 코드와 다를 때 발생합니다. """

    def __init__(self, found: int, expected: int):
        super().__init__(f"container version {found} is not supported (expected version {expected})")
        self.found = found
        self.expected = expected


class TrainingDivergedError(RuntimeError):
    """ 학습 중 손실이 NaN/Inf가 되었을 때 발생합니다. 문제의 배치 정보를 담습니다. """

    def __init__(self, message: str, batch_id: int, dump_path: str | None = None):
        detail = f"{message} (batch {batch_id}"
        detail += f", dump: {dump_path})" if dump_path else ")"
        super().__init__(detail)
        self.batch_id = batch_id
        self.dump_path = dump_path
