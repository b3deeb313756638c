/**
 * Trailing-edge debounce: the wrapped function runs once, `delayMs`
 * after the last call in a burst, with that call's arguments.
 */
export function debounce<A extends unknown[]>(
  f: (...args: A) => void,
  delayMs = 250,
): (...args: A) => void {
  let timer: ReturnType<typeof setTimeout> | undefined;
  return (...args: A) => {
    if (timer !== undefined) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = undefined;
      f(...args);
    }, delayMs);
  };
}
