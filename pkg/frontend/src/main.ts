// DOM layer: renders ChatViewState into the page and forwards UI events to
// the controller. No chat logic lives here.

import { ApiClient } from "./api.js";
import { ChatController } from "./state.js";
import { renderTraceHtml, escapeHtml } from "./trace.js";

const api = new ApiClient("");
const controller = new ChatController(api);

const el = {
  status: document.getElementById("status") as HTMLElement,
  messages: document.getElementById("messages") as HTMLElement,
  input: document.getElementById("input") as HTMLTextAreaElement,
  send: document.getElementById("send") as HTMLButtonElement,
  notice: document.getElementById("notice") as HTMLElement,
  tracePane: document.getElementById("trace-pane") as HTMLElement,
  traceBody: document.getElementById("trace-body") as HTMLElement,
  traceClose: document.getElementById("trace-close") as HTMLButtonElement,
};

function render(): void {
  const state = controller.state;
  el.status.className = state.status;
  el.status.title = state.status;

  el.messages.innerHTML = state.messages
    .map((message) => {
      const trace =
        message.role === "assistant" && message.turnId !== null
          ? `<a href="#" class="trace-link" data-turn="${message.turnId}">trace</a>`
          : "";
      return `<div class="msg ${message.role}">${escapeHtml(message.text)}${trace}</div>`;
    })
    .join("");
  el.messages.scrollTop = el.messages.scrollHeight;

  const noticeText = state.notice ?? state.error ?? "";
  el.notice.innerHTML = noticeText
    ? `${escapeHtml(noticeText)}${state.failedText !== null ? ' <a href="#" id="retry">retry</a>' : ""}`
    : "";
  el.notice.style.display = noticeText ? "block" : "none";

  el.send.disabled = !controller.canSend(el.input.value);

  if (state.selectedTurnId !== null) {
    el.tracePane.style.display = "flex";
    el.traceBody.innerHTML = state.traceLoading
      ? `<p class="placeholder">loading…</p>`
      : state.selectedTrace
        ? renderTraceHtml(state.selectedTrace)
        : "";
  } else {
    el.tracePane.style.display = "none";
  }

  const retry = document.getElementById("retry");
  if (retry) {
    retry.addEventListener("click", (event) => {
      event.preventDefault();
      void controller.retry();
    });
  }
  for (const link of el.messages.querySelectorAll<HTMLAnchorElement>(".trace-link")) {
    link.addEventListener("click", (event) => {
      event.preventDefault();
      void controller.openTrace(Number(link.dataset.turn));
    });
  }
}

controller.subscribe(render);

el.send.addEventListener("click", () => {
  const text = el.input.value;
  el.input.value = "";
  void controller.send(text);
});
el.input.addEventListener("keydown", (event) => {
  if (event.key === "Enter" && !event.shiftKey) {
    event.preventDefault();
    el.send.click();
  }
});
el.input.addEventListener("input", () => {
  el.send.disabled = !controller.canSend(el.input.value);
});
el.traceClose.addEventListener("click", () => controller.closeTrace());

void controller.connect();
render();
