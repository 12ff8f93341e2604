import { ChatApi } from "./api.js";
import { mount } from "./app.js";
import { UiController } from "./controller.js";

declare global {
  interface Window {
    CHARTBRIDGE_BASE_URL?: string;
  }
}

async function boot(): Promise<void> {
  const base = window.CHARTBRIDGE_BASE_URL ?? "http://127.0.0.1:8080";
  const api = new ChatApi(base);
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app mount point");
  try {
    const patients = await api.listPatients();
    mount(root, new UiController(api, patients, new Date()));
  } catch (err) {
    root.textContent = `Cannot reach the chat service at ${base}: ${String(err)}`;
  }
}

void boot();
