/** Small transient error toast in the page corner. */
export function showToast(message: string, host: HTMLElement = document.body): void {
  const el = document.createElement("div");
  el.className = "toast";
  el.textContent = message;
  host.appendChild(el);
  setTimeout(() => el.remove(), 4000);
}
