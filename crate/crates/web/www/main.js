// Expects the wasm-bindgen output (--target web) in ./pkg.
import init, { evaluateDesign, referenceCurve, searchExample, referenceDesign } from "./pkg/robust_spd_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const example = () => Number($("example").value);

function show(out, f) {
  out.classList.remove("error");
  try {
    out.textContent = f();
  } catch (e) {
    out.classList.add("error");
    out.textContent = String(e.message ?? e);
  }
}

function summary(report) {
  const r = (x) => x.toPrecision(6);
  return `phi       ${r(report.phi)}\npi_root   ${r(report.pi_root)}\nloss_root ${r(report.loss_root)}`;
}

function drawCurve(curve) {
  const c = $("plot");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const all = curve.loss_root_a.concat(curve.loss_root_b);
  const lo = Math.min(...all), hi = Math.max(...all);
  const xmax = curve.alpha[curve.alpha.length - 1] || 1;
  const pad = 40;
  const x = (a) => pad + (a / xmax) * (c.width - 2 * pad);
  const y = (v) => c.height - pad - ((v - lo) / (hi - lo || 1)) * (c.height - 2 * pad);
  g.strokeStyle = "#888";
  g.strokeRect(pad, pad, c.width - 2 * pad, c.height - 2 * pad);
  g.fillStyle = "#000";
  g.fillText(hi.toPrecision(4), 2, pad);
  g.fillText(lo.toPrecision(4), 2, c.height - pad);
  g.fillText("alpha = " + xmax, c.width - pad - 50, c.height - pad + 15);
  for (const [key, colour, label] of [["loss_root_a", "#c33", "A"], ["loss_root_b", "#36c", "B"]]) {
    g.strokeStyle = colour;
    g.beginPath();
    curve[key].forEach((v, i) => (i ? g.lineTo : g.moveTo).call(g, x(curve.alpha[i]), y(v)));
    g.stroke();
    g.fillStyle = colour;
    g.fillText(label, x(xmax) + 4, y(curve[key][curve[key].length - 1]));
  }
}

await init();

const load = (which) => { $("design").value = referenceDesign(example(), which) ?? ""; };
$("loadA").onclick = () => load("A");
$("loadB").onclick = () => load("B");
$("example").onchange = () => load("A");
$("evaluate").onclick = () =>
  show($("evalOut"), () => {
    const v = JSON.parse(evaluateDesign(example(), $("design").value, num("alpha"), num("d")));
    return `${v.runs} runs in plots of sizes ${v.plots.join(", ")}\n` + summary(v.report);
  });
$("curve").onclick = () => {
  try {
    drawCurve(JSON.parse(referenceCurve(example(), num("alphaMax"), 61, num("d"))));
  } catch (e) {
    alert(e.message ?? e);
  }
};
$("search").onclick = () =>
  show($("searchOut"), () => {
    const v = JSON.parse(searchExample(example(), num("alpha"), num("d"), num("seed"), num("m0"), num("nt")));
    return `${summary(v.report)}\naccepted ${v.accepted} of ${v.proposals} proposals\n\n${v.design}`;
  });

load("A");
