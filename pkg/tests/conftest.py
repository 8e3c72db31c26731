import os

# The suite is sized for a single core; the replica chunking makes worker
# count irrelevant to results, so pin it for predictable runtimes.
os.environ.setdefault("CASCADELAB_WORKERS", "1")
