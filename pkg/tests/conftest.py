import sys
from pathlib import Path

from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

# property tests explore the same examples on every run
settings.register_profile("stable", derandomize=True, deadline=None)
settings.load_profile("stable")
