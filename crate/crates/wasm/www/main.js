import init, { Demo } from "./pkg/isrf_wasm.js";

const RESOLUTION = 32;
const SIZE = 160;

const canvas = document.getElementById("view");
const ctx = canvas.getContext("2d");
const status = document.getElementById("status");

function pixel(ev) {
  const r = canvas.getBoundingClientRect();
  return [
    Math.floor(((ev.clientX - r.left) / r.width) * SIZE),
    Math.floor(((ev.clientY - r.top) / r.height) * SIZE),
  ];
}

function draw(demo) {
  const rgba = demo.frame();
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), SIZE, SIZE), 0, 0);
  status.textContent = `${demo.selected_voxels()} voxels selected`;
}

function run(demo, action) {
  try {
    action();
  } catch (e) {
    status.textContent = String(e.message ?? e);
    return;
  }
  draw(demo);
}

await init();
const demo = new Demo(RESOLUTION, SIZE);
draw(demo);

let drag = null;
canvas.addEventListener("contextmenu", (ev) => ev.preventDefault());
canvas.addEventListener("pointerdown", (ev) => {
  canvas.setPointerCapture(ev.pointerId);
  drag = { orbit: ev.button === 2, negative: ev.shiftKey, last: [ev.clientX, ev.clientY], points: [...pixel(ev)] };
});
canvas.addEventListener("pointermove", (ev) => {
  if (!drag) return;
  if (drag.orbit) {
    demo.orbit((ev.clientX - drag.last[0]) * -0.01, (ev.clientY - drag.last[1]) * 0.01);
    drag.last = [ev.clientX, ev.clientY];
    draw(demo);
  } else {
    const [x, y] = pixel(ev);
    drag.points.push(x, y);
    ctx.fillStyle = drag.negative ? "#d33" : "#3a3";
    ctx.fillRect(x - 1, y - 1, 3, 3);
  }
});
canvas.addEventListener("pointerup", () => {
  const d = drag;
  drag = null;
  if (!d || d.orbit) return;
  if (d.points.length === 2) d.points.push(...d.points);
  status.textContent = "segmenting...";
  setTimeout(() => run(demo, () => demo.stroke(Int32Array.from(d.points), d.negative)), 0);
});
document.getElementById("undo").addEventListener("click", () => run(demo, () => demo.undo()));
document.getElementById("remove").addEventListener("change", (ev) =>
  run(demo, () => demo.set_removed(ev.target.checked)),
);
