import os.path
import unittest


def additional_tests():
    loader = unittest.defaultTestLoader
    start_dir = os.path.dirname(os.path.abspath(__file__))
    top_level_dir = os.path.dirname(start_dir)
    suites = loader.discover(start_dir, top_level_dir=top_level_dir)
    return suites
