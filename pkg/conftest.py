# Repository root on sys.path so tests import the `src` package like main.py does.
