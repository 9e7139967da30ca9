#include <math.h>
#include <stdio.h>
#include "isoflow.h"

#define CHECK(cond)                                                         \
    do {                                                                    \
        if (!(cond)) {                                                      \
            const char *m = isoflow_last_error_message();                   \
            fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond, m ? m : ""); \
            return 1;                                                       \
        }                                                                   \
    } while (0)

int main(void) {
    IsoflowKernel *k = NULL;
    CHECK(isoflow_kernel_new_power(2, 8, 3.0, 1.0, 0.1, &k) == ISOFLOW_STATUS_OK);
    double c = 0, g = 0, g1 = 1, g2 = 1;
    CHECK(isoflow_kernel_c(k, &c) == ISOFLOW_STATUS_OK);
    CHECK(isoflow_kernel_eval(k, 0.0, &g, NULL, &g1, &g2) == ISOFLOW_STATUS_OK);
    CHECK(fabs(g - 2.0 * c) < 1e-12 && g1 == 0.0 && g2 == 0.0);

    IsoflowKernel *bad = NULL;
    CHECK(isoflow_kernel_new_power(2, 8, 3.0, 1.0, -1.0, &bad) == ISOFLOW_STATUS_INVALID_CONFIG);
    CHECK(bad == NULL && isoflow_last_error_message() != NULL);

    double pts[6] = {0, 0, 1, 1, 0, 0};
    IsoflowFlow *f = NULL;
    CHECK(isoflow_flow_new(k, 8, 1e-3, 7, pts, 2, &f) == ISOFLOW_STATUS_OK);
    CHECK(isoflow_flow_step(f, 100) == ISOFLOW_STATUS_OK);
    double out[6];
    CHECK(isoflow_flow_positions(f, out, 6) == ISOFLOW_STATUS_OK);
    for (int i = 0; i < 2; i++) {
        double n = sqrt(out[3 * i] * out[3 * i] + out[3 * i + 1] * out[3 * i + 1] + out[3 * i + 2] * out[3 * i + 2]);
        CHECK(fabs(n - 1.0) < 1e-12);
    }
    CHECK(fabs(isoflow_flow_time(f) - 0.1) < 1e-12);
    isoflow_flow_free(f);
    isoflow_kernel_free(k);
    printf("ok %s\n", isoflow_version());
    return 0;
}
