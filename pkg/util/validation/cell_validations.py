"""Cell-level validators for numeric CSV input."""
import math


def contains_text(value: str) -> bool:
    if value is None:
        return False
    return bool(str(value).strip())


def is_real_number(value: str) -> bool:
    try:
        number = float(str(value).strip())
    except ValueError:
        return False
    return math.isfinite(number)


def is_positive_integer(value: str) -> bool:
    text = str(value).strip()
    return text.isdigit() and int(text) >= 1


class Validator:
    tests: list[callable]

    def __init__(self, field_type: type):
        self.field_type = field_type

    def is_valid(self, value) -> bool:
        for test in self.tests:
            if not test(value):
                return False
        return True

    def convert(self, value):
        return self.field_type(str(value).strip())


class RealValidator(Validator):
    def __init__(self):
        super().__init__(float)
        self.tests = [contains_text, is_real_number]


class CountValidator(Validator):
    def __init__(self):
        super().__init__(int)
        self.tests = [contains_text, is_positive_integer]
