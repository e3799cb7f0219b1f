// Entry point: scenario selection screen, then the session view.

import { ApiClient } from "./api.js";
import { SessionApp, type Mode } from "./app.js";
import type { ScenarioListPayload } from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderScenarioSelect(
  root: HTMLElement,
  listing: ScenarioListPayload,
  onPick: (themeId: string, problemId: string, mode: Mode) => void,
): void {
  root.textContent = "";
  const panel = el("section", { "data-panel": "scenario-select", class: "panel select" });
  panel.append(el("h1", {}, "Pick a scenario"));

  const modeRow = el("div", { class: "mode-row" });
  for (const mode of ["tutorup", "baseline", "test"] as Mode[]) {
    const label = el("label", {});
    const radio = el("input", {
      type: "radio",
      name: "mode",
      value: mode,
    }) as HTMLInputElement;
    if (mode === "tutorup") radio.checked = true;
    label.append(radio, el("span", {}, ` ${mode}`));
    modeRow.append(label);
  }
  panel.append(modeRow);

  const list = el("div", { class: "scenario-list" });
  for (const scenario of listing.scenarios) {
    const card = el("div", { class: "scenario-card", "data-theme": scenario.theme.id });
    card.append(el("h2", {}, scenario.theme.title));
    card.append(el("p", {}, scenario.theme.description));
    const start = el("button", {}, "Start session");
    start.addEventListener("click", () => {
      const mode = (panel.querySelector('input[name="mode"]:checked') as HTMLInputElement)
        .value as Mode;
      onPick(scenario.theme.id, scenario.problem.id, mode);
    });
    card.append(start);
    list.append(card);
  }
  panel.append(list);
  root.append(panel);
}

export async function boot(root: HTMLElement, api: ApiClient): Promise<void> {
  const listing = await api.listScenarios();
  renderScenarioSelect(root, listing, async (themeId, problemId, mode) => {
    const condition = mode === "baseline" ? "baseline" : "tutorup";
    const session = await api.createSession(themeId, problemId, condition, mode === "test");
    new SessionApp(root, api, session, mode);
  });
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void boot(document.getElementById("app") as HTMLElement, new ApiClient());
}
