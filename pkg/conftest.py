# Puts the repository root on sys.path so tests import top-level packages directly.
