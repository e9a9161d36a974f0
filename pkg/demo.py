import asyncio
import os
import sys
from concurrent.futures import ThreadPoolExecutor

# Get the directory of the current script
# Falls back to the current working directory if __file__ is not available
try:
    script_dir = os.path.dirname(os.path.abspath(__file__))
except NameError:
    script_dir = os.getcwd()

src_path = os.path.join(script_dir, 'src')
if src_path not in sys.path:
    sys.path.insert(0, src_path)

from metrics import evaluate
from model_select import TuningPolicy
from pipeline import run_pipeline
from simgen import five_node_example

N = 2000
SEED = 0
METHODS = ("dri", "dps", "none")


def describe_peel(supergraph) -> None:
    for i, batch in enumerate(supergraph.leaf_iv_pairs, start=1):
        pairs = ", ".join(f"X{l + 1}->Y{k + 1}" for l, k in batch)
        print(f"  iteration {i}: {pairs}")
    relations = ", ".join(f"{k + 1}~>{j + 1}" for k, j in sorted(supergraph.ancestral_pairs))
    print(f"  ancestral relations: {relations}")


async def run_demo():
    print(f"Simulating the five-node logistic example (n={N}, seed={SEED})...")
    dataset, truth = five_node_example(N, seed=SEED)
    print(f"✓ True edges: {sorted((k + 1, j + 1) for k, j in truth.edges)}")

    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=1) as pool:
        result = await loop.run_in_executor(pool, run_pipeline, dataset, TuningPolicy(seed=SEED), list(METHODS))

    print("✓ Peeling trace:")
    describe_peel(result.supergraph)
    for message in result.warnings:
        print(f"! {message}")

    for method, estimate in result.estimates.items():
        report = evaluate(estimate.edges, truth.edges, truth.p, estimate.U, truth.U)
        edges = sorted((k + 1, j + 1) for k, j in estimate.edges)
        fscore = "NA" if report.fscore is None else f"{report.fscore:.2f}"
        print(f"✓ {method:<5} edges={edges} F={fscore} SHD={report.shd} "
              f"Frobenius={report.frobenius:.2f}")


async def main():
    try:
        await run_demo()
        print("\n✅ Demo completed successfully!")
    except Exception as e:
        print(f"\n❌ Demo failed: {e}")
        import traceback
        traceback.print_exc()


if __name__ == "__main__":
    asyncio.run(main())
