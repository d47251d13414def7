import init, { Lab } from "./pkg/rifs_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const status = (text) => { $("status").textContent = text; };

function lab() {
  return new Lab(num("l1"), num("a1"), num("l2"), num("a2"), num("p1"), num("eps"), $("additive").checked);
}

function axes(ctx, w, h) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(40, 10);
  ctx.lineTo(40, h - 30);
  ctx.lineTo(w - 10, h - 30);
  ctx.stroke();
}

function bars(values, color, label) {
  const c = $("plot"), ctx = c.getContext("2d");
  const w = c.width, h = c.height, top = Math.max(...values) || 1;
  axes(ctx, w, h);
  const bw = (w - 50) / values.length;
  ctx.fillStyle = color;
  values.forEach((v, i) => {
    const bh = (v / top) * (h - 50);
    ctx.fillRect(40 + i * bw, h - 30 - bh, Math.max(bw - 0.5, 0.5), bh);
  });
  ctx.fillStyle = "#222";
  ctx.fillText("-1", 36, h - 15);
  ctx.fillText("1", w - 16, h - 15);
  ctx.fillText(`${label}, max density ${top.toFixed(3)}`, 50, 20);
}

function curve(points, bound) {
  const c = $("plot"), ctx = c.getContext("2d");
  const w = c.width, h = c.height;
  axes(ctx, w, h);
  const xs = points.map((p) => Math.log2(p[0])), ys = points.map((p) => p[1]);
  const x0 = Math.min(...xs), x1 = Math.max(...xs), y1 = Math.max(...ys) * 1.2;
  const px = (x) => 40 + ((x1 - x) / (x1 - x0 || 1)) * (w - 60);
  const py = (y) => h - 30 - (y / y1) * (h - 50);
  ctx.strokeStyle = "#1f6feb";
  ctx.beginPath();
  points.forEach((p, i) => (i ? ctx.lineTo : ctx.moveTo).call(ctx, px(xs[i]), py(p[1])));
  ctx.stroke();
  ctx.fillStyle = "#222";
  points.forEach((p, i) => ctx.fillText(p[1].toFixed(2), px(xs[i]) - 10, py(p[1]) - 6));
  ctx.fillText(`(1/r^2)(nu,nu)_r against r = 0.05 2^-j; bound^2 = ${bound.toFixed(1)}`, 50, 20);
}

function cube(orbit) {
  const c = $("cube"), ctx = c.getContext("2d"), s = c.width;
  ctx.clearRect(0, 0, s, s);
  ctx.fillStyle = "rgba(200, 60, 30, 0.6)";
  for (let k = 0; k < orbit.length; k += 3) {
    const y = orbit[k + 1], z = orbit[k + 2];
    ctx.fillRect(((y + 1) / 2) * s, ((1 - z) / 2) * s, 2, 2);
  }
}

function run(fn) {
  return () => {
    try {
      const t = performance.now();
      const msg = fn(lab());
      status(`${msg}  (${(performance.now() - t).toFixed(0)} ms)`);
    } catch (e) {
      status(`error: ${e.message ?? e}`);
    }
  };
}

$("density").onclick = run((l) => {
  bars(Array.from(l.density(num("n"), 200, BigInt(num("seed")))), "#2f855a", "stationary density");
  return "density of nu_eps";
});

$("l2").onclick = run((l) => {
  const flat = Array.from(l.l2_curve(num("n"), 7, BigInt(num("seed"))));
  const proxy = flat.pop();
  const pts = [];
  for (let i = 0; i < flat.length; i += 2) pts.push([flat[i], flat[i + 1]]);
  const bound = l.l2_bound(num("m"));
  curve(pts, bound * bound);
  return `liminf proxy ${proxy.toFixed(4)}, bound C'/sqrt(eps) = ${Number.isNaN(bound) ? "n/a" : bound.toFixed(3)}`;
});

$("projection").onclick = run((l) => {
  const m = num("m"), seed = BigInt(num("seed"));
  bars(Array.from(l.projection(m, 2000, 60, 200, seed)), "#805ad5", `x-projection, m = ${m}`);
  cube(Array.from(l.orbit(m, 0.1, 0.1, 0.1, 4000)));
  return "projection of the cube map's invariant measure; right: (y, z) along one orbit";
});

init().then(() => status("ready")).catch((e) => status(`failed to load wasm: ${e}`));
