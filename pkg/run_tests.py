import sys
import unittest

from simtune.monitoring.logging_config import setup_logging


def run_tests():
    setup_logging()
    loader = unittest.TestLoader()
    suite = loader.discover("tests", top_level_dir=".")

    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)
    return result.wasSuccessful()


if __name__ == "__main__":
    success = run_tests()
    sys.exit(0 if success else 1)
