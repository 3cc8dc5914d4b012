"""
Complete Test Script - Test All Workbench Components

Runs every test module of the whitebed workbench and prints a summary.
"""

import os
import sys
import logging
from datetime import datetime

import pytest

# Setup logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)

HERE = os.path.dirname(os.path.abspath(__file__))

# (summary name, module, title) in dependency order
TEST_MODULES = [
    ("linalg", "test_linalg.py", "Batch Whitening"),
    ("autodiff", "test_autodiff.py", "Reverse-Mode Gradients"),
    ("slicing", "test_slicing.py", "Sliceplan Whitening"),
    ("losses", "test_losses.py", "Loss Family"),
    ("augment", "test_augment.py", "View Augmentation"),
    ("data", "test_data.py", "Dataset Loading"),
    ("checkpoint", "test_checkpoint.py", "Checkpoint Format"),
    ("model", "test_model.py", "Encoder and Projector"),
    ("config", "test_config_manager.py", "Run Configuration"),
    ("training", "test_training.py", "Training Loop"),
    ("evaluation", "test_evaluation.py", "k-NN and Linear Probe"),
    ("benchmark", "test_benchmark.py", "Step Timing"),
    ("plot", "test_plot_metrics.py", "Metrics Charts"),
    ("cli", "test_cli.py", "Command Line"),
]


def run_module(index, module, title):
    """Run one test module through pytest.

    Returns:
        True when every test passed, False on failures, None when nothing ran
    """
    print("\n" + "="*80)
    print(f"TEST {index}: {title}")
    print("="*80)

    path = os.path.join(HERE, module)
    if not os.path.exists(path):
        print(f"⚠️  {module} not found")
        return None

    try:
        code = pytest.main(["-q", path])
    except Exception as e:
        print(f"❌ {title} Error: {e}")
        return False

    if code == pytest.ExitCode.OK:
        print(f"✅ {title} OK")
        return True
    if code == pytest.ExitCode.NO_TESTS_COLLECTED:
        print(f"⚠️  No tests collected in {module}")
        return None
    print(f"❌ {title} Failed (exit code {int(code)})")
    return False


def main():
    """Run all tests"""
    print("="*80)
    print("WHITEBED WORKBENCH - COMPLETE TEST")
    print("="*80)
    print(f"Test started at: {datetime.now()}")

    results = {}
    for index, (name, module, title) in enumerate(TEST_MODULES, start=1):
        results[name] = run_module(index, module, title)

    # Summary
    print("\n" + "="*80)
    print("TEST SUMMARY")
    print("="*80)

    passed = sum(1 for v in results.values() if v is True)
    failed = sum(1 for v in results.values() if v is False)
    skipped = sum(1 for v in results.values() if v is None)

    for test_name, result in results.items():
        if result is True:
            print(f"✅ {test_name.upper()}: PASSED")
        elif result is False:
            print(f"❌ {test_name.upper()}: FAILED")
        else:
            print(f"⏭️  {test_name.upper()}: SKIPPED")

    print("\n" + "="*80)
    print(f"Total: {passed} passed, {failed} failed, {skipped} skipped")
    print("="*80)

    if failed == 0:
        print("\n✅ ALL TESTS PASSED!")
        return 0
    else:
        print(f"\n❌ {failed} TEST(S) FAILED")
        return 1


if __name__ == "__main__":
    sys.exit(main())
