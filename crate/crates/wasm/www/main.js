import init, { explorePartition, exploreEvidence, exploreConsistency } from "./pkg/hcan_wasm.js";

const $ = (id) => document.getElementById(id);
const nums = (s) => s.split(",").map((x) => x.trim()).filter((x) => x !== "").map(Number);

function show(el, f) {
  try {
    el.classList.remove("error");
    const v = JSON.parse(f());
    el.textContent = JSON.stringify(v, null, 2);
    return v;
  } catch (e) {
    el.classList.add("error");
    el.textContent = String(e.message ?? e);
    return null;
  }
}

function randomWalk(n) {
  let x = 0;
  return Array.from({ length: n }, () => (x += Math.random() - 0.5)).map((v) => v.toFixed(3));
}

// series as a line, finest level boundaries as horizontal rules
function plot(values, levels) {
  const c = $("p-plot").getContext("2d");
  const { width: w, height: h } = c.canvas;
  c.clearRect(0, 0, w, h);
  if (!levels || values.length < 2) return;
  const lo = Math.min(...values), hi = Math.max(...values);
  const y = (v) => h - 10 - ((v - lo) / (hi - lo || 1)) * (h - 20);
  const fine = levels[levels.length - 1];
  c.strokeStyle = "#c66";
  for (const b of fine.boundaries) {
    c.beginPath(); c.moveTo(0, y(b)); c.lineTo(w, y(b)); c.stroke();
  }
  c.strokeStyle = "#246";
  c.beginPath();
  values.forEach((v, i) => {
    const x = (i / (values.length - 1)) * w;
    i ? c.lineTo(x, y(v)) : c.moveTo(x, y(v));
  });
  c.stroke();
}

function partition() {
  const values = nums($("p-values").value);
  const classes = nums($("p-classes").value);
  const v = show($("p-out"), () => explorePartition(Float64Array.from(values), Uint32Array.from(classes)));
  plot(values, v);
}

function evidence() {
  show($("e-out"), () => exploreEvidence(Float64Array.from(nums($("e-evidence").value)), Number($("e-true").value)));
}

function consistency() {
  show($("c-out"), () =>
    exploreConsistency(Float64Array.from(nums($("c-coarse").value)), Float64Array.from(nums($("c-fine").value))));
}

await init();
$("p-values").value = randomWalk(120).join(", ");
$("p-random").onclick = () => { $("p-values").value = randomWalk(120).join(", "); partition(); };
for (const id of ["p-values", "p-classes"]) $(id).oninput = partition;
for (const id of ["e-evidence", "e-true"]) $(id).oninput = evidence;
for (const id of ["c-coarse", "c-fine"]) $(id).oninput = consistency;
partition(); evidence(); consistency();
