"""Train the main checkpoint and the ablation trio sequentially."""
import time
from pathlib import Path
from liveview.training import TrainConfig, train

ART = Path(__file__).parent

def run(name, cfg):
    ckpt = ART / f"{name}.lvw"
    if ckpt.exists():
        print(f"{name}: exists, skip", flush=True)
        return
    print(f"=== {name} start {time.strftime('%H:%M:%S')}", flush=True)
    t0 = time.time()
    train(cfg, checkpoint_path=ckpt, log_path=ART / f"{name}_log.csv", progress=True)
    print(f"=== {name} done in {(time.time()-t0)/60:.1f} min", flush=True)

run("main_v5_d16", TrainConfig(seed=0, iterations=5000))
AB_ITERS = 1500
run("ablate_target_dyn", TrainConfig(seed=1, iterations=AB_ITERS))
run("ablate_input_dyn", TrainConfig(seed=1, iterations=AB_ITERS, centering="input"))
run("ablate_static", TrainConfig(seed=1, iterations=AB_ITERS, arch="static"))
print("ALL DONE", flush=True)
