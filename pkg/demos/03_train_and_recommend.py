"""Train on a periodic walk, evaluate, and ask for next-POI recommendations.

Run: python demos/03_train_and_recommend.py   (about 10 s)
"""
from getnext import dataset as ds
from getnext import flow_map as fm
from getnext.config import TrainConfig
from getnext.evaluation import evaluate
from getnext.model import recommend_next
from getnext.training import train

# Two users cycle through eight POIs every two hours.
d = ds.preprocess(ds.synthesize(2, 8, 2, "cycle", seed=7))
flow = fm.build_from_dataset(d)

# A narrow model is plenty here; the published widths are the TrainConfig defaults.
config = TrainConfig(epochs=60, poi_dim=16, time_dim=8, gcn_hidden=(16, 32), tam_dim=16,
                     ff_dim=64, encoder_layers=1, lr=5e-3, dropout=0.1, seed=0)
result = train(d, flow, config,
               on_epoch=lambda e: e.epoch % 20 == 0 and print(
                   f"epoch {e.epoch:3d}  loss {e.train_loss:.4f}  val Acc@1 {e.val_acc1:.3f}"))
print(f"best validation epoch: {result.best_epoch}")

print("test split:")
print(evaluate(result.model, d, flow, "test").to_text(), end="")

first = d.train[0].checkins
for user in ("u0000", "u0001"):
    prefix = [ds.CheckIn(user, q.poi_id, q.category_id, q.lat, q.lon, q.timestamp) for q in first[:3]]
    top = recommend_next(result.model, d, flow, user, prefix, top_k=3)
    print(f"{user} after {' -> '.join(q.poi_id for q in prefix)}: {top}")
