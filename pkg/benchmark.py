import sys
import time

try:
    from cli import run_offline
    from config import build_case, load_config
    from hf import StepSolver, solve_primal
    from online import evaluate
except Exception as exc:
    raise SystemExit(f"Dependencies missing: {exc}")

CONFIG = "configs/tiny.yaml"


def bench(func, name, loops=20):
    t0 = time.perf_counter()
    for _ in range(loops):
        func()
    t1 = time.perf_counter()
    per_run = (t1 - t0) / loops
    print(f"{name}: {t1 - t0:.4f}s over {loops} runs ({per_run * 1e3:.3f} ms/run)")
    return per_run


if __name__ == "__main__":
    path = sys.argv[1] if len(sys.argv) > 1 else CONFIG
    case = build_case(load_config(path))
    run = run_offline(case)
    archive = run.archive
    model = archive.model.online_view()
    xi = run.test[0]

    def high_fidelity():
        op = archive.affine.operator(xi, case.dt)
        solve_primal(op, case.dt, case.n_steps, archive.p0, StepSolver(op.M, op.A, case.dt))

    hf = bench(high_fidelity, "HF solve")
    rb = bench(lambda: evaluate(model, xi), "online evaluate", loops=200)
    print(f"speedup: x{hf / rb:.1f} (N_pr = {model.n_pr}, N_du = {model.n_du}, N = {archive.affine.size})")
