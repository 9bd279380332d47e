import init, { Demo } from "./pkg/sata_web_demo.js";

const $ = (id) => document.getElementById(id);
const DEPTH = 8;
const ALPHAS = Array.from({ length: 25 }, (_, i) => 0.25 + i * 0.125);

let demo;

function drawImage(canvas, data, side) {
  const ctx = canvas.getContext("2d");
  const px = ctx.createImageData(side, side);
  for (let i = 0; i < side * side; i++) {
    for (let c = 0; c < 3; c++) px.data[4 * i + c] = Math.round(255 * data[3 * i + c]);
    px.data[4 * i + 3] = 255;
  }
  const tmp = new OffscreenCanvas(side, side);
  tmp.getContext("2d").putImageData(px, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

function drawCells(canvas, grid, color) {
  const ctx = canvas.getContext("2d");
  const cell = canvas.width / grid;
  for (let i = 0; i < grid * grid; i++) {
    ctx.fillStyle = color(i);
    ctx.fillRect((i % grid) * cell, Math.floor(i / grid) * cell, cell, cell);
  }
}

function scoreColor(s) {
  const t = Math.max(-1, Math.min(1, s / 3));
  const r = t > 0 ? 255 : Math.round(255 * (1 + t));
  const b = t < 0 ? 255 : Math.round(255 * (1 - t));
  const g = Math.round(255 * (1 - Math.abs(t)));
  return `rgb(${r},${g},${b})`;
}

function labelColor(l) {
  if (l === -1) return "#ddd";
  if (l === -2) return "#222";
  return `hsl(${(l * 47) % 360} 70% 55%)`;
}

function lineChart(canvas, xs, series, yMin, yMax) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 30;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, 5, w - pad - 5, h - pad - 5);
  ctx.fillStyle = "#444";
  ctx.fillText(yMax.toFixed(2), 2, 12);
  ctx.fillText(yMin.toFixed(2), 2, h - pad);
  ctx.fillText(xs[0].toString(), pad, h - 10);
  ctx.fillText(xs[xs.length - 1].toString(), w - 30, h - 10);
  const x0 = xs[0], x1 = xs[xs.length - 1];
  const X = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (w - pad - 5);
  const Y = (y) => 5 + (1 - (y - yMin) / (yMax - yMin || 1)) * (h - pad - 5);
  for (const { ys, color } of series) {
    ctx.strokeStyle = color;
    ctx.beginPath();
    ys.forEach((y, i) => (i ? ctx.lineTo(X(xs[i]), Y(y)) : ctx.moveTo(X(xs[i]), Y(y))));
    ctx.stroke();
  }
}

function block() {
  return Number($("block").value);
}

function renderMaps() {
  const grid = demo.grid();
  const b = block();
  drawImage($("img"), demo.image(), grid * 4);
  const s = demo.scores(b);
  drawCells($("scores"), grid, (i) => scoreColor(s[i]));
  const labels = demo.labels(b);
  drawCells($("split"), grid, (i) => labelColor(labels[i]));
  const tokens = demo.ffn_tokens();
  $("tokens").textContent =
    `FFN tokens at block ${b}: ${tokens[b]} of ${demo.num_tokens()}; ` +
    `all blocks: [${Array.from(tokens).join(", ")}]`;
}

function renderSweep() {
  const flat = demo.alpha_sweep(new Float64Array(ALPHAS));
  const flops = [], drift = [];
  for (let i = 0; i < flat.length; i += 3) {
    flops.push(flat[i + 1]);
    drift.push(flat[i + 2]);
  }
  const fmax = Math.max(...flops), dmax = Math.max(...drift, 1e-12);
  lineChart($("sweep"), ALPHAS, [
    { ys: flops.map((f) => f / fmax), color: "#36c" },
    { ys: drift.map((d) => d / dmax), color: "#c33" },
  ], 0, 1);
}

function renderStability() {
  const flat = demo.stability_curve($("stab-kind").value, 0n);
  const b = block();
  const att = [], sco = [];
  for (let sev = 0; sev < 5; sev++) {
    att.push(flat[sev * 2 * DEPTH + b]);
    sco.push(flat[sev * 2 * DEPTH + DEPTH + b]);
  }
  lineChart($("stability"), [1, 2, 3, 4, 5], [
    { ys: att, color: "#36c" },
    { ys: sco, color: "#c33" },
  ], -1, 1);
}

function syncOutputs() {
  for (const id of ["block", "alpha", "gamma", "severity"]) $(`${id}-out`).textContent = $(id).value;
}

function guard(fn) {
  return () => {
    try {
      syncOutputs();
      fn();
      $("status").textContent = "";
    } catch (e) {
      $("status").textContent = String(e);
    }
  };
}

async function main() {
  await init();
  demo = new Demo(0n, DEPTH, 32);
  $("block").max = DEPTH - 1;
  $("block").oninput = guard(() => { renderMaps(); renderStability(); });
  $("alpha").oninput = guard(() => { demo.set_alpha(Number($("alpha").value)); renderMaps(); });
  $("gamma").oninput = guard(() => { demo.set_gamma(Number($("gamma").value)); renderMaps(); renderSweep(); });
  const setCorruption = guard(() => {
    demo.set_corruption($("kind").value, Number($("severity").value), 0n);
    renderMaps();
    renderSweep();
  });
  $("kind").onchange = setCorruption;
  $("severity").oninput = setCorruption;
  $("stab-kind").onchange = guard(renderStability);
  guard(() => { renderMaps(); renderSweep(); renderStability(); })();
}

main().catch((e) => ($("status").textContent = String(e)));
