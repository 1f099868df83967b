import os
import sys


def out_dir(name):
    base = sys.argv[1] if len(sys.argv) > 1 else "demo_out"
    path = os.path.join(base, name)
    os.makedirs(path, exist_ok=True)
    return path
