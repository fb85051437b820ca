import { ChatStore } from "./state.js";
import type { ChatState } from "./state.js";
import type { ChatTurn } from "./types.js";

export const K_CHOICES = [1, 10, 50];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, className?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderTurn(turn: ChatTurn): HTMLElement {
  const bubble = el("div", `turn turn-${turn.role}`);
  bubble.appendChild(el("div", "turn-text", turn.text));
  if (turn.role === "system" && turn.recommendations.length) {
    const list = el("ol", "recommendations");
    for (const rec of turn.recommendations) {
      const row = el("li", "recommendation");
      row.dataset.itemId = String(rec.item_id);
      row.appendChild(el("span", "rec-name", rec.name));
      row.appendChild(el("span", "rec-score", rec.score.toFixed(3)));
      list.appendChild(row);
    }
    bubble.appendChild(list);
  }
  return bubble;
}

export function mountChat(root: HTMLElement, store: ChatStore): void {
  root.innerHTML = "";
  const transcript = el("div", "transcript");
  const banner = el("div", "error-banner");
  banner.hidden = true;
  const bannerText = el("span", "error-text");
  const retryButton = el("button", "retry-button", "Retry");
  banner.append(bannerText, retryButton);

  const form = el("form", "composer");
  const input = el("input", "utterance-input") as HTMLInputElement;
  input.placeholder = "Say something…";
  const send = el("button", "send-button", "Send") as HTMLButtonElement;
  send.type = "submit";
  const kSelect = el("select", "k-select") as HTMLSelectElement;
  for (const k of K_CHOICES) {
    const option = el("option", undefined, `top ${k}`) as HTMLOptionElement;
    option.value = String(k);
    kSelect.appendChild(option);
  }
  kSelect.value = "10";
  const resetButton = el("button", "reset-button", "Reset") as HTMLButtonElement;
  resetButton.type = "button";
  form.append(input, send, kSelect, resetButton);
  root.append(transcript, banner, form);

  const syncSendDisabled = (state: ChatState) => {
    send.disabled = state.inFlight || input.value.trim() === "";
  };

  store.subscribe((state) => {
    transcript.innerHTML = "";
    for (const turn of state.turns) transcript.appendChild(renderTurn(turn));
    transcript.scrollTop = transcript.scrollHeight;

    banner.hidden = state.error === null;
    bannerText.textContent = state.error ?? "";

    input.disabled = state.inFlight;
    kSelect.value = String(state.k);
    syncSendDisabled(state);
  });

  input.addEventListener("input", () => syncSendDisabled(store.snapshot));
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const text = input.value;
    input.value = "";
    void store.send(text);
  });
  retryButton.addEventListener("click", () => void store.retry());
  kSelect.addEventListener("change", () => store.setK(Number(kSelect.value)));
  resetButton.addEventListener("click", () => void store.reset());
}
