#include <stdio.h>
#include <string.h>
#include "prefrules.h"

int main(void) {
    PrHierarchies *h = pr_hierarchies_builtin();
    const char *opts[] = {"Pepsi", "Coke"};
    char *label = NULL;
    bool fallback = true;
    if (pr_assign_unified_label(h, "bring me a cola", opts, 2, "Pepsi", &label, &fallback) != PR_STATUS_OK) {
        return 1;
    }
    printf("%s %d\n", label, fallback);
    pr_string_free(label);
    pr_hierarchies_free(h);

    double hist[] = {1.0, 1.0, 1.0, 0.2};
    bool fired = false;
    if (pr_intervention_gate(hist, 4, 0.2, 1.5, &fired) != PR_STATUS_OK || !fired) {
        return 2;
    }
    double e = 0.0;
    if (pr_efficiency(0.5, 10, 0, &e) != PR_STATUS_UNDEFINED || pr_last_error() == NULL) {
        return 3;
    }
    printf("%s\n", pr_last_error());
    return 0;
}
