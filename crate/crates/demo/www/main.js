import init, { projectPoint, strongQuadraticRun, skewComparison } from "./pkg/coupled_sa_demo.js";

const $ = (id) => document.getElementById(id);
const vec = (id) => $(id).value.split(",").map((s) => s.trim()).filter((s) => s !== "").map(Number);
const num = (id) => Number($(id).value);
const fmt = (v) => (Number.isNaN(v) ? "n/a" : v.toExponential(3));

function fail(target, e) {
  target.innerHTML = `<p class="err">${e.message ?? e}</p>`;
}

function table(headers, rows) {
  const head = `<tr>${headers.map((h) => `<th>${h}</th>`).join("")}</tr>`;
  const body = rows.map((r) => `<tr>${r.map((c) => `<td>${c}</td>`).join("")}</tr>`).join("");
  return `<table>${head}${body}</table>`;
}

function rows(flat, width) {
  const out = [];
  for (let i = 0; i < flat.length; i += width) out.push(Array.from(flat.slice(i, i + width)));
  return out;
}

function project() {
  try {
    const p = projectPoint($("p-kind").value, vec("p-a"), vec("p-b"), num("p-r"), vec("p-x"));
    $("p-out").innerHTML = `<p>projection: (${Array.from(p).map((v) => v.toFixed(6)).join(", ")})</p>`;
  } catch (e) {
    fail($("p-out"), e);
  }
}

function quadratic() {
  try {
    const flat = strongQuadraticRun(num("q-mu"), num("q-l"), num("q-noise"), num("q-lambda"), num("q-k"), num("q-seed"));
    const body = rows(flat, 5).map(([k, ex, et, bx, bt]) => [k, fmt(ex), fmt(bx), fmt(et), fmt(bt)]);
    $("q-out").innerHTML = table(["k", "‖x−x*‖²", "Q<sub>x</sub>/k", "‖θ−θ*‖²", "Q<sub>θ</sub>/k"], body);
  } catch (e) {
    fail($("q-out"), e);
  }
}

function plot(canvas, data) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 40;
  ctx.clearRect(0, 0, w, h);
  const kMax = data[data.length - 1][0];
  const yMax = Math.max(...data.flatMap((r) => [r[1], r[2]]), 1e-12);
  const px = (k) => pad + ((w - 2 * pad) * k) / kMax;
  const py = (y) => h - pad - ((h - 2 * pad) * y) / yMax;
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.fillText(yMax.toFixed(3), 4, pad + 4);
  ctx.fillText("0", 4, h - pad);
  ctx.fillText(String(kMax), w - pad - 20, h - pad + 16);
  for (const [col, color, label, y] of [[1, "#c33", "plain", 16], [2, "#36c", "regularized", 30]]) {
    ctx.strokeStyle = color;
    ctx.beginPath();
    data.forEach((r, i) => (i === 0 ? ctx.moveTo(px(r[0]), py(r[col])) : ctx.lineTo(px(r[0]), py(r[col]))));
    ctx.stroke();
    ctx.fillStyle = color;
    ctx.fillText(label, w - pad - 70, pad + y);
  }
}

function skew() {
  try {
    const data = rows(skewComparison(num("s-k"), 200, num("s-seed")), 3);
    plot($("s-plot"), data);
    const [k, plain, reg] = data[data.length - 1];
    $("s-out").innerHTML = `<p>at k = ${k}: plain ${plain.toExponential(3)}, regularized ${reg.toExponential(3)}</p>`;
  } catch (e) {
    fail($("s-out"), e);
  }
}

await init();
$("p-go").addEventListener("click", project);
$("q-go").addEventListener("click", quadratic);
$("s-go").addEventListener("click", skew);
