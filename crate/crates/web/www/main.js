import init, { Demo } from "./pkg/neb_web.js";

const HALF = 3.5;
const GRID = 72;
const $ = (id) => document.getElementById(id);
let demo = null;
let running = false;
const marks = { kde: null, learned: null };

function status(text) {
  $("status").textContent = text;
}

function toPixel(canvas, x, y) {
  return [
    ((x + HALF) / (2 * HALF)) * canvas.width,
    ((HALF - y) / (2 * HALF)) * canvas.height,
  ];
}

function toPlane(canvas, px, py) {
  return [(px / canvas.width) * 2 * HALF - HALF, HALF - (py / canvas.height) * 2 * HALF];
}

function dots(ctx, canvas, flat, color, r) {
  ctx.fillStyle = color;
  for (let i = 0; i < flat.length; i += 2) {
    const [px, py] = toPixel(canvas, flat[i], flat[i + 1]);
    ctx.beginPath();
    ctx.arc(px, py, r, 0, 2 * Math.PI);
    ctx.fill();
  }
}

function path(ctx, canvas, flat, color) {
  ctx.strokeStyle = color;
  ctx.lineWidth = 1;
  ctx.beginPath();
  for (let i = 0; i < flat.length; i += 2) {
    const [px, py] = toPixel(canvas, flat[i], flat[i + 1]);
    i === 0 ? ctx.moveTo(px, py) : ctx.lineTo(px, py);
  }
  ctx.stroke();
}

function draw(which) {
  const canvas = $(which);
  const ctx = canvas.getContext("2d");
  const e = demo.field(which, HALF, GRID);
  // compress the range so the wells stay readable
  const top = Math.log1p(Math.max(...e));
  const img = ctx.createImageData(GRID, GRID);
  for (let j = 0; j < GRID; j++) {
    for (let i = 0; i < GRID; i++) {
      const v = 1 - Math.log1p(e[j * GRID + i]) / top;
      const k = 4 * ((GRID - 1 - j) * GRID + i);
      img.data[k] = 30 + 200 * v;
      img.data[k + 1] = 40 + 180 * v * v;
      img.data[k + 2] = 90 + 60 * (1 - v);
      img.data[k + 3] = 255;
    }
  }
  const tmp = new OffscreenCanvas(GRID, GRID);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = true;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
  dots(ctx, canvas, demo.points(), "rgba(0,0,0,0.35)", 1.2);
  const m = marks[which];
  if (m && m.walk) {
    path(ctx, canvas, m.walk, "rgba(255,255,255,0.6)");
    dots(ctx, canvas, m.jumps, "#e0218a", 3);
  }
  if (m && m.click) {
    dots(ctx, canvas, m.click.slice(0, 2), "#000", 3);
    dots(ctx, canvas, m.click.slice(2, 4), "#d22", 4);
    dots(ctx, canvas, m.click.slice(4, 6), "#15c", 4);
  }
}

function redraw() {
  draw("kde");
  draw("learned");
}

function reset() {
  running = false;
  $("auto").textContent = "train continuously";
  try {
    demo = new Demo($("layout").value, Number($("sigma").value), $("hidden").value, Number($("seed").value));
  } catch (err) {
    status(String(err));
    return;
  }
  marks.kde = marks.learned = null;
  redraw();
  status(`sigma ${demo.sigma()}: untrained network`);
}

function trainStep(epochs) {
  const t0 = performance.now();
  const loss = demo.train(epochs);
  const ms = performance.now() - t0;
  draw("learned");
  status(`epoch ${demo.epochs()}  loss ${loss.toFixed(4)}  (${(ms / epochs).toFixed(0)} ms/epoch)`);
}

function loop() {
  if (!running) return;
  trainStep(2);
  requestAnimationFrame(loop);
}

function sample() {
  const jumps = Number($("jumps").value);
  const period = Number($("period").value);
  const eps = Number($("epsfrac").value) * demo.sigma();
  const seed = Math.floor(Math.random() * 1e9);
  for (const which of ["kde", "learned"]) {
    try {
      const flat = demo.sample(which, jumps, period, eps, seed);
      const split = flat.length - 2 * jumps;
      marks[which] = { ...marks[which], walk: flat.slice(0, split), jumps: flat.slice(split) };
    } catch (err) {
      status(String(err));
      return;
    }
  }
  redraw();
  status(`${jumps} jumps, ${jumps * period} Langevin steps per panel, eps ${eps.toPrecision(3)}`);
}

function click(which, ev) {
  const canvas = $(which);
  const [x, y] = toPlane(canvas, ev.offsetX, ev.offsetY);
  const out = demo.descend(which, x, y);
  marks[which] = { ...marks[which], click: [x, y, ...out] };
  draw(which);
  status(`${which}: (${x.toFixed(2)}, ${y.toFixed(2)}) jumps to (${out[0].toFixed(2)}, ${out[1].toFixed(2)}), settles at (${out[2].toFixed(2)}, ${out[3].toFixed(2)})`);
}

await init();
$("reset").onclick = reset;
$("train").onclick = () => trainStep(10);
$("auto").onclick = () => {
  running = !running;
  $("auto").textContent = running ? "stop" : "train continuously";
  loop();
};
$("sample").onclick = sample;
$("kde").onclick = (ev) => click("kde", ev);
$("learned").onclick = (ev) => click("learned", ev);
reset();
