"""
scripts/regenerate.py
=====================
Replays the command recorded in a run manifest with the current code and
reports whether the regenerated output is byte-identical to the original.

Useful after touching the numerics: rerun an old result and see whether
anything moved.

Usage:
  python scripts/regenerate.py output/sweep_sphere.csv.manifest.json
"""

import filecmp
import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

# Setup paths to import modules from parent directory
script_dir = Path(__file__).parent.resolve()
project_root = script_dir.parent.resolve()

os.chdir(project_root)
sys.path.append(str(project_root))

import main

# dest → flag for options whose dest differs from the flag name
LIST_FLAGS = {"n_list": "--n", "a_list": "--a", "family": "--family", "times": "--times", "only": "--only"}
SKIP = {"command", "out", "handler"}


def manifest_argv(manifest: dict, out: Path) -> list[str]:
    """Rebuild a main.py argument list from a manifest's parameter echo."""
    params = manifest["params"]
    command = manifest["command"]
    argv = [command]
    if command == "cache":
        return argv + [params["action"]]

    for key, value in params.items():
        if key in SKIP or key == "action" or value is None or value is False:
            continue
        flag = LIST_FLAGS.get(key, "--" + key.replace("_", "-"))
        if key == "k_max":
            flag = "--k"
        if value is True:
            argv.append(flag)
        elif isinstance(value, list):
            argv += [flag] + [str(v) for v in value]
        else:
            argv += [flag, str(value)]
    return argv + ["--out", str(out)]


def regenerate(manifest_path):
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        print(f"❌ Manifest not found: {manifest_path}")
        return False

    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)

    original = Path(manifest["outputs"][0])
    if not original.exists():
        print(f"❌ Original output not found: {original}")
        return False

    workdir = Path(tempfile.mkdtemp(prefix="cutofflab-regen-"))
    target = workdir / original.name
    argv = manifest_argv(manifest, target)
    print(f"🔄 Replaying: python main.py {' '.join(argv)}")

    code = main.main(argv)
    if code != 0:
        print(f"❌ Replay exited with {code}")
        return False

    same = filecmp.cmp(original, target, shallow=False)
    if same:
        print(f"\n✅ Byte-identical: {original}")
        shutil.rmtree(workdir, ignore_errors=True)
    else:
        print(f"\n⚠️  Output differs. Regenerated copy kept at: {target}")
    return same


if __name__ == "__main__":
    if len(sys.argv) < 2:
        print("Usage: python scripts/regenerate.py <output>.manifest.json")
        sys.exit(1)

    sys.exit(0 if regenerate(sys.argv[1]) else 1)
