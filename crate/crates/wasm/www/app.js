import init, { bounds, drift, counterexample } from "./pkg/trilevel_wasm.js";

const $ = (id) => document.getElementById(id);

function overrides() {
  return [
    `n_agents=${$("n").value}`,
    `eta1=${Number($("eta1").value)}`,
    `delta_np=${Number($("delta_np").value)}`,
    `seed=${$("seed").value}`,
  ].join("\n");
}

function guard(out, fn) {
  out.classList.remove("err");
  try {
    fn();
  } catch (e) {
    out.textContent = String(e.message ?? e);
    out.classList.add("err");
  }
}

// Line plot of several series sharing one x axis; `null` bounds are skipped.
function plot(canvas, xs, series) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 40;
  ctx.clearRect(0, 0, w, h);
  const ys = series.flatMap((s) => s.ys).filter(Number.isFinite);
  if (xs.length < 2 || ys.length === 0) return;
  const x0 = xs[0], x1 = xs[xs.length - 1];
  const y0 = Math.min(0, ...ys), y1 = Math.max(...ys) * 1.05 || 1;
  const px = (x) => pad + ((x - x0) / (x1 - x0)) * (w - 2 * pad);
  const py = (y) => h - pad - ((y - y0) / (y1 - y0)) * (h - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  ctx.fillText(y1.toPrecision(3), 2, pad + 4);
  ctx.fillText(y0.toPrecision(3), 2, h - pad);
  ctx.fillText(`${x0} s`, pad, h - pad + 14);
  ctx.fillText(`${x1} s`, w - pad - 30, h - pad + 14);
  series.forEach((s, k) => {
    ctx.strokeStyle = s.color;
    ctx.setLineDash(s.dashed ? [6, 4] : []);
    ctx.beginPath();
    s.ys.forEach((y, i) => (i ? ctx.lineTo(px(xs[i]), py(y)) : ctx.moveTo(px(xs[i]), py(y))));
    ctx.stroke();
    ctx.fillStyle = s.color;
    ctx.fillText(s.label, pad + 8 + 150 * k, pad - 8);
  });
  ctx.setLineDash([]);
}

await init();

$("run-bounds").onclick = () =>
  guard($("bounds-out"), () => {
    const r = JSON.parse(bounds(overrides(), $("sizes").value));
    $("bounds-out").textContent = r.text;
  });

$("run-drift").onclick = () =>
  guard($("drift-out"), () => {
    const r = JSON.parse(drift(overrides(), $("drift-scenario").value, Number($("drift-duration").value)));
    const series = [{ label: "D_phi per window", ys: r.d_phi, color: "#1565c0" }];
    if (r.phi_max !== null) series.push({ label: "Phi_max", ys: r.t.map(() => r.phi_max), color: "#c62828", dashed: true });
    plot($("drift-plot"), r.t, series);
    const worst = Math.max(...r.d_phi);
    $("drift-out").textContent =
      `worst window drift ${worst.toExponential(3)} vs bound ${r.phi_max}\n` +
      `max |w| ${Math.max(...r.max_weight_norm).toFixed(4)} (W_max ${r.w_max})\n` +
      `contract failures ${r.failures}, alarms ${r.alarms}`;
  });

$("run-cx").onclick = () =>
  guard($("cx-out"), () => {
    const r = JSON.parse(counterexample(overrides(), $("cx-scenario").value, Number($("cx-duration").value)));
    const xs = r.growth.map((p) => p[0]);
    const series = [{ label: "max |w|", ys: r.growth.map((p) => p[1]), color: "#2e7d32" }];
    const slopeRow = r.report.rows.find((row) => row.quantity.startsWith("weight norm slope"));
    if (slopeRow) {
      const slope = slopeRow.analytic;
      series.push({ label: "envelope", ys: xs.map((t) => slope * t), color: "#c62828", dashed: true });
    }
    plot($("cx-plot"), xs, series);
    const fmt = (x) => (x === null || x === undefined ? "-" : Number(x).toExponential(4));
    const rows = r.report.rows.map((row) =>
      `${row.quantity.padEnd(34)} ${fmt(row.analytic).padStart(12)} ${fmt(row.simulated).padStart(12)} ${fmt(row.reference).padStart(12)}`);
    $("cx-out").textContent =
      `${"quantity".padEnd(34)} ${"analytic".padStart(12)} ${"simulated".padStart(12)} ${"reference".padStart(12)}\n` +
      rows.join("\n") + `\n\nverdict: ${r.report.verdict}`;
  });
