import init, { filterResponse, syntheticTrace, rocExplorer, montageLabels } from "./pkg/prognosis_wasm_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function axes(ctx, w, h) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(40.5, 10.5, w - 50, h - 40);
}

function line(canvas, xs, ys, opts = {}) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height;
  axes(ctx, w, h);
  const x0 = opts.xmin ?? Math.min(...xs), x1 = opts.xmax ?? Math.max(...xs);
  let y0 = opts.ymin ?? Math.min(...ys), y1 = opts.ymax ?? Math.max(...ys);
  if (y0 === y1) { y0 -= 1; y1 += 1; }
  const px = (x) => 40 + ((x - x0) / (x1 - x0)) * (w - 50);
  const py = (y) => 10 + (1 - (y - y0) / (y1 - y0)) * (h - 40);
  ctx.fillStyle = "#555";
  ctx.font = "11px sans-serif";
  ctx.fillText(y1.toPrecision(3), 2, 18);
  ctx.fillText(y0.toPrecision(3), 2, h - 30);
  ctx.fillText(x0.toPrecision(3), 40, h - 14);
  ctx.fillText(x1.toPrecision(3), w - 40, h - 14);
  if (opts.xlabel) ctx.fillText(opts.xlabel, w / 2 - 20, h - 14);
  if (opts.extra) opts.extra(ctx, px, py);
  ctx.strokeStyle = opts.color ?? "#1f5fbf";
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(px(x), py(ys[i])) : ctx.moveTo(px(x), py(ys[i]))));
  ctx.stroke();
  if (opts.dots) {
    ctx.fillStyle = ctx.strokeStyle;
    xs.forEach((x, i) => ctx.fillRect(px(x) - 2, py(ys[i]) - 2, 4, 4));
  }
}

function fail(id, e) {
  $(id).className = "out err";
  $(id).textContent = String(e.message ?? e);
}

function ok(id, text) {
  $(id).className = "out";
  $(id).textContent = text;
}

function drawFilter() {
  try {
    const n = 512, fs = num("f-fs");
    const out = filterResponse(num("f-low"), num("f-high"), num("f-order"), fs, n);
    const f = Array.from(out.subarray(0, n));
    let m = Array.from(out.subarray(n));
    const db = $("f-db").checked;
    if (db) m = m.map((v) => 20 * Math.log10(Math.max(v, 1e-6)));
    const at = (hz) => out[n + Math.round((hz / (fs / 2)) * (n - 1))];
    ok("f-msg", `|H| at low cutoff ${at(num("f-low")).toFixed(4)}, at high cutoff ${at(num("f-high")).toFixed(4)} (grid-nearest)`);
    line($("f-plot"), f, m, { ymin: db ? -80 : 0, ymax: db ? 5 : 1.1, xlabel: "Hz" });
  } catch (e) {
    fail("f-msg", e);
  }
}

function drawTrace() {
  try {
    const fs = 250;
    const y = Array.from(syntheticTrace($("s-outcome").value === "poor", BigInt(num("s-seed")), num("s-seconds"), fs, num("s-channel"), $("s-filter").checked));
    const t = y.map((_, i) => i / fs);
    const rms = Math.sqrt(y.reduce((a, v) => a + v * v, 0) / y.length);
    ok("s-msg", `${y.length} samples at ${fs} Hz, RMS ${rms.toFixed(2)} µV`);
    line($("s-plot"), t, y, { xlabel: "s" });
  } catch (e) {
    fail("s-msg", e);
  }
}

function parseList(id) {
  return $(id).value.split(/[\s,]+/).filter((s) => s.length).map(Number);
}

function drawRoc() {
  try {
    const cap = num("r-cap");
    const res = JSON.parse(rocExplorer(new Float64Array(parseList("r-scores")), new Uint8Array(parseList("r-labels")), cap));
    const fpr = res.points.map((p) => p.fpr), tpr = res.points.map((p) => p.tpr);
    ok("r-msg", `challenge metric (max TPR with FPR ≤ ${cap}): ${res.challenge_metric.toFixed(4)}; ${res.points.length} ROC points`);
    line($("r-plot"), fpr, tpr, {
      xmin: 0, xmax: 1, ymin: 0, ymax: 1, dots: true, xlabel: "FPR",
      extra: (ctx, px, py) => {
        ctx.fillStyle = "rgba(0, 160, 0, 0.12)";
        ctx.fillRect(px(0), py(1), px(cap) - px(0), py(0) - py(1));
      },
    });
  } catch (e) {
    fail("r-msg", e);
  }
}

await init();
const channel = $("s-channel");
montageLabels().forEach((name, i) => channel.add(new Option(name, i)));
for (const id of ["f-low", "f-high", "f-order", "f-fs", "f-db"]) $(id).addEventListener("input", drawFilter);
for (const id of ["s-outcome", "s-seed", "s-seconds", "s-channel", "s-filter"]) $(id).addEventListener("change", drawTrace);
for (const id of ["r-scores", "r-labels", "r-cap"]) $(id).addEventListener("input", drawRoc);
drawFilter();
drawTrace();
drawRoc();
