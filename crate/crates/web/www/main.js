import init, { coverage_demo, pe_similarity, depth_frame } from "./pkg/scene_sampler_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const COLORS = { mc: "#d62728", uniform: "#1f77b4", mc_adaptive: "#2ca02c" };

function showError(e) {
  $("error").textContent = String(e && e.message ? e.message : e);
}

function guarded(fn) {
  return (...args) => {
    $("error").textContent = "";
    try {
      fn(...args);
    } catch (e) {
      showError(e);
    }
  };
}

// ---- frame selection ----

let lastScene = null;

function drawMap(d) {
  const cv = $("cov-map");
  const ctx = cv.getContext("2d");
  const pad = 20;
  const w = d.room_max[0] - d.room_min[0];
  const h = d.room_max[1] - d.room_min[1];
  const s = Math.min((cv.width - 2 * pad) / w, (cv.height - 2 * pad) / h);
  const X = (x) => pad + (x - d.room_min[0]) * s;
  const Y = (y) => cv.height - pad - (y - d.room_min[1]) * s;
  ctx.clearRect(0, 0, cv.width, cv.height);
  ctx.strokeStyle = "#444";
  ctx.strokeRect(X(d.room_min[0]), Y(d.room_max[1]), w * s, h * s);
  ctx.fillStyle = "#ddd";
  for (const o of d.objects) {
    ctx.fillRect(X(o.min[0]), Y(o.max[1]), (o.max[0] - o.min[0]) * s, (o.max[1] - o.min[1]) * s);
  }
  ctx.fillStyle = "#999";
  for (const c of d.cameras) {
    ctx.fillRect(X(c.x) - 1, Y(c.y) - 1, 2, 2);
  }
  const mark = (run, color, len) => {
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    for (const idx of run.selected) {
      const c = d.cameras[idx];
      ctx.beginPath();
      ctx.moveTo(X(c.x), Y(c.y));
      ctx.lineTo(X(c.x + c.dx * len), Y(c.y + c.dy * len));
      ctx.stroke();
    }
    ctx.lineWidth = 1;
  };
  mark(d.uniform, COLORS.uniform, 0.6);
  mark(d.mc, COLORS.mc, 0.9);
}

function drawCurves(d) {
  const cv = $("cov-curve");
  const ctx = cv.getContext("2d");
  const pad = 30;
  ctx.clearRect(0, 0, cv.width, cv.height);
  const runs = ["mc", "uniform", "mc_adaptive"].map((k) => [k, d[k]]);
  const n = Math.max(...runs.map(([, r]) => r.trajectory.length), 1);
  const X = (i) => pad + (i / n) * (cv.width - 2 * pad);
  const Y = (v) => cv.height - pad - v * (cv.height - 2 * pad);
  ctx.strokeStyle = "#888";
  ctx.strokeRect(pad, pad, cv.width - 2 * pad, cv.height - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.fillText("coverage", 2, pad - 8);
  ctx.fillText("frames", cv.width - pad - 30, cv.height - 8);
  ctx.fillText("1.0", 4, Y(1) + 4);
  ctx.fillText("0", 16, Y(0) + 4);
  ctx.setLineDash([4, 4]);
  ctx.beginPath();
  ctx.moveTo(X(0), Y(0.95));
  ctx.lineTo(X(n), Y(0.95));
  ctx.stroke();
  ctx.setLineDash([]);
  for (const [k, r] of runs) {
    ctx.strokeStyle = COLORS[k];
    ctx.beginPath();
    ctx.moveTo(X(0), Y(0));
    r.trajectory.forEach((v, i) => ctx.lineTo(X(i + 1), Y(v)));
    ctx.stroke();
  }
}

const runCoverage = guarded(() => {
  const seed = num("cov-seed");
  const frames = num("cov-frames");
  const t0 = performance.now();
  const d = JSON.parse(coverage_demo(seed, frames, num("cov-budget")));
  const ms = performance.now() - t0;
  lastScene = { seed, frames };
  drawMap(d);
  drawCurves(d);
  const pct = (r) => (100 * r.final_ratio).toFixed(1) + "%";
  $("cov-stats").textContent =
    `${d.scene_id}: ${d.voxels} voxels | max coverage ${pct(d.mc)} | uniform ${pct(d.uniform)} | ` +
    `adaptive ${pct(d.mc_adaptive)} with ${d.mc_adaptive.selected.length} frames | ${ms.toFixed(0)} ms`;
  $("depth-frame").max = frames - 1;
  drawDepth();
});

// ---- position encoding ----

let anchor = [1.0, 1.0];

const drawPe = guarded(() => {
  const cv = $("pe-map");
  const size = 120;
  const half = num("pe-half");
  const sims = pe_similarity(anchor[0], anchor[1], 0.5, half, size, num("pe-dim"), num("pe-grid"));
  const img = new ImageData(size, size);
  let lo = Infinity;
  for (const v of sims) lo = Math.min(lo, v);
  for (let k = 0; k < sims.length; k++) {
    const t = (sims[k] - lo) / Math.max(1 - lo, 1e-9);
    img.data[4 * k] = 255 * t;
    img.data[4 * k + 1] = 80 + 120 * t * t;
    img.data[4 * k + 2] = 255 * (1 - t);
    img.data[4 * k + 3] = 255;
  }
  const tmp = new OffscreenCanvas(size, size);
  tmp.getContext("2d").putImageData(img, 0, 0);
  const ctx = cv.getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, cv.width, cv.height);
  $("pe-stats").textContent =
    `anchor (${anchor[0].toFixed(3)}, ${anchor[1].toFixed(3)}) m, min similarity ${lo.toFixed(3)}`;
});

$("pe-map").addEventListener("click", (ev) => {
  const cv = ev.currentTarget;
  const half = num("pe-half");
  const r = cv.getBoundingClientRect();
  const u = (ev.clientX - r.left) / r.width;
  const v = (ev.clientY - r.top) / r.height;
  anchor = [anchor[0] - half + 2 * half * u, anchor[1] - half + 2 * half * v];
  drawPe();
});

// ---- depth ----

const drawDepth = guarded(() => {
  if (!lastScene) return;
  const cv = $("depth-img");
  const frame = num("depth-frame");
  const depth = depth_frame(lastScene.seed, lastScene.frames, frame, cv.width, cv.height);
  let hi = 0;
  for (const v of depth) hi = Math.max(hi, v);
  const img = new ImageData(cv.width, cv.height);
  for (let k = 0; k < depth.length; k++) {
    const g = depth[k] > 0 ? 255 * (1 - depth[k] / hi) : 0;
    img.data[4 * k] = img.data[4 * k + 1] = img.data[4 * k + 2] = g;
    img.data[4 * k + 3] = 255;
  }
  cv.getContext("2d").putImageData(img, 0, 0);
  $("depth-label").textContent = `frame ${frame}, max depth ${hi.toFixed(2)} m`;
});

await init();
$("cov-run").addEventListener("click", runCoverage);
for (const id of ["pe-dim", "pe-grid", "pe-half"]) $(id).addEventListener("change", drawPe);
$("depth-frame").addEventListener("input", drawDepth);
runCoverage();
drawPe();
