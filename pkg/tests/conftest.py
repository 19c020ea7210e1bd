import sys
from pathlib import Path

from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

# property suites run at least 100 generated cases each
settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")
