import init, { simulate_pendulum, criterion, probe } from "./pkg/meanfield_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const DT = 0.01;

function axes(ctx, w, h, pad) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(pad, pad);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - pad, h - pad);
  ctx.stroke();
}

function plotLines(canvas, series, opts = {}) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 36;
  axes(ctx, w, h, pad);
  const xs = series.flatMap((s) => s.x);
  const ys = series.flatMap((s) => s.y).concat(opts.hline ?? []);
  const x0 = Math.min(...xs), x1 = Math.max(...xs);
  const y0 = Math.min(0, ...ys), y1 = Math.max(...ys) || 1;
  const px = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const py = (y) => h - pad - ((y - y0) / (y1 - y0 || 1)) * (h - 2 * pad);
  if (opts.hline !== undefined) {
    ctx.strokeStyle = "#c33";
    ctx.setLineDash([5, 4]);
    ctx.beginPath();
    ctx.moveTo(pad, py(opts.hline));
    ctx.lineTo(w - pad, py(opts.hline));
    ctx.stroke();
    ctx.setLineDash([]);
  }
  for (const s of series) {
    ctx.strokeStyle = s.color ?? "#2a6";
    ctx.beginPath();
    s.x.forEach((x, i) => (i ? ctx.lineTo(px(x), py(s.y[i])) : ctx.moveTo(px(x), py(s.y[i]))));
    ctx.stroke();
  }
  if (opts.marker !== undefined) {
    ctx.strokeStyle = "#36c";
    ctx.beginPath();
    ctx.moveTo(px(opts.marker), pad);
    ctx.lineTo(px(opts.marker), h - pad);
    ctx.stroke();
  }
  ctx.fillStyle = "#333";
  ctx.fillText(opts.title ?? "", pad, pad - 10);
  ctx.fillText(y1.toPrecision(3), 2, pad + 4);
  ctx.fillText(x1.toPrecision(3), w - pad - 20, h - pad + 14);
}

let sim = null;

function drawCloud(k) {
  const canvas = $("cloud");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const span = 4 / Math.sqrt(num("beta")) + Math.hypot(num("shift_q"), num("shift_p"));
  const px = (q) => w / 2 + (q / span) * (w / 2);
  const py = (p) => h / 2 - (p / span) * (h / 2);
  ctx.strokeStyle = "#ccc";
  ctx.beginPath();
  ctx.moveTo(0, h / 2);
  ctx.lineTo(w, h / 2);
  ctx.moveTo(w / 2, 0);
  ctx.lineTo(w / 2, h);
  ctx.stroke();
  const frame = sim.frames[k];
  ctx.fillStyle = "rgba(40, 100, 200, 0.5)";
  for (let i = 0; i < frame.length; i += 2) ctx.fillRect(px(frame[i]) - 1.5, py(frame[i + 1]) - 1.5, 3, 3);
  const [mq, mp] = sim.means[k];
  ctx.fillStyle = "#c33";
  ctx.fillRect(px(mq) - 4, py(mp) - 4, 8, 8);
  ctx.fillStyle = "#333";
  ctx.fillText("(q, p) particles, red = mean", 6, 14);
  $("frame_t").textContent = `t = ${sim.times[k].toFixed(2)}`;
  plotLines($("lyap"), [{ x: sim.times, y: sim.lyapunov }], {
    title: "half squared W2 to the Gibbs cloud",
    marker: sim.times[k],
  });
}

function runSimulation() {
  const steps = Math.round(num("t_sim") / DT);
  const recordEvery = Math.max(1, Math.round(steps / 200));
  sim = JSON.parse(
    simulate_pendulum(num("kappa"), num("beta"), num("n"), num("shift_q"), num("shift_p"),
      num("t_sim"), DT, recordEvery, num("seed")),
  );
  $("frame").max = sim.times.length - 1;
  $("frame").value = 0;
  drawCloud(0);
}

function runCriterion() {
  const r = JSON.parse(criterion(num("kappa"), num("beta"), num("n"), num("degree"), num("seed")));
  const eig = r.mean_eigenvalues.map(([re, im]) => `${re.toFixed(4)} ${im < 0 ? "-" : "+"} ${Math.abs(im).toFixed(4)}i`);
  $("crit_out").textContent = [
    `basis: ${r.basis.join(", ")}`,
    `eigenvalues: ${r.eigenvalues.map((x) => x.toExponential(3)).join(", ")}`,
    `max eigenvalue: ${r.max_eigenvalue.toExponential(4)}  ->  ${r.passed ? "nonpositive (pass)" : "positive (fail)"}`,
    `mean dynamics A + B eigenvalues: ${eig.join(", ")}  ->  ${r.hurwitz ? "Hurwitz" : "not Hurwitz"}`,
  ].join("\n");
}

function runProbe() {
  const r = JSON.parse(
    probe(num("kappa"), num("beta"), num("n"), num("eps"), num("delta"), num("samples"), num("t_probe"), DT, num("seed")),
  );
  const series = r.curves.map((c) => ({ x: c.times, y: c.w2, color: c.escaped ? "#c33" : "#2a6" }));
  plotLines($("probe"), series, { title: "W2 to the Gibbs cloud per perturbed sample, dashed = epsilon", hline: r.epsilon });
  const escaped = r.curves.filter((c) => c.escaped).length;
  $("probe_out").textContent = `sup W2 = ${r.sup_w2.toFixed(4)}, escaped ${escaped} of ${r.curves.length} samples`;
}

function guard(f) {
  return () => {
    try {
      f();
    } catch (e) {
      alert(e.message ?? String(e));
    }
  };
}

await init();
$("run_sim").onclick = guard(runSimulation);
$("run_crit").onclick = guard(runCriterion);
$("run_probe").onclick = guard(runProbe);
$("frame").oninput = () => sim && drawCloud(Number($("frame").value));
guard(runSimulation)();
guard(runCriterion)();
